"""Model assembly: embedding, shrinking attention stack, predictor, checkpoints.

Each layer consumes its predecessor's patch summaries, so layer input sizes
shrink by the patch size every level and the total work stays linear in the
lookback. Every layer also contributes an aggregated feature row; the
predictor reads the concatenation of all of them (or only the top layer's
when multi-scale is off).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import vsm
from .attention import PatchQueryBank, RecurrentGate, patch_layer_forward
from .autodiff import (
    ConfigurationError,
    Parameter,
    Tensor,
    add,
    concat,
    matmul,
    reshape,
    tanh,
    tile_to,
)

VSM_MODES = ("off", "naive", "light")


@dataclass
class ModelConfig:
    lookback: int
    horizon: int
    n_vars: int
    hidden_dim: int = 32
    memory_dim: int = 5
    core_dim: int = 5
    patch_sizes: tuple = (4, 4)
    vsm: str = "light"
    recurrent: bool = True
    multiscale: bool = True
    seed: int = 0


def _suggest_patch_sizes(lookback: int, requested) -> list[int]:
    """Greedy nearest-divisor repair of an invalid patch list."""
    t = lookback
    out = []
    for s in requested:
        divisors = [k for k in range(2, t + 1) if t % k == 0]
        if not divisors:
            break
        best = min(divisors, key=lambda k: (abs(k - s), k))
        out.append(best)
        t //= best
    return out


def validate_config(cfg: ModelConfig) -> list[int]:
    """Check a config and return the per-layer input sizes [T_1..T_L].

    Patch sizes below 2 would stop the layer sizes from shrinking; sizes
    that do not divide their layer's input are rejected with a suggested
    nearest valid list rather than silently padded.
    """
    for name, v in (("lookback", cfg.lookback), ("horizon", cfg.horizon), ("n_vars", cfg.n_vars),
                    ("hidden_dim", cfg.hidden_dim), ("memory_dim", cfg.memory_dim),
                    ("core_dim", cfg.core_dim)):
        if v < 1:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    if cfg.vsm not in VSM_MODES:
        raise ConfigurationError(f"vsm must be one of {VSM_MODES}, got {cfg.vsm!r}")
    if cfg.core_dim > cfg.hidden_dim:
        raise ConfigurationError(f"core_dim {cfg.core_dim} must not exceed hidden_dim {cfg.hidden_dim}")
    if not cfg.patch_sizes:
        raise ConfigurationError("at least one patch size is required")
    sizes = []
    t = cfg.lookback
    for i, s in enumerate(cfg.patch_sizes):
        if s < 2:
            raise ConfigurationError(
                f"patch size {s} at layer {i} is below the minimum of 2 needed for a shrinking stack"
            )
        if t % s != 0:
            suggestion = _suggest_patch_sizes(cfg.lookback, cfg.patch_sizes)
            raise ConfigurationError(
                f"divisibility violation: layer {i} input size {t} is not divisible by patch size {s}; "
                f"nearest valid patch sizes for lookback {cfg.lookback}: {suggestion}"
            )
        sizes.append(t)
        t //= s
    assert sum(sizes) < 2 * cfg.lookback  # guaranteed by patch sizes >= 2
    return sizes


def positional_table(length: int, width: int) -> np.ndarray:
    """Sinusoidal position rows: sin on even feature slots, cos on odd ones."""
    table = np.zeros((length, width))
    positions = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, width, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / width)[None, :]
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)[:, : width // 2]
    return table


class InputEmbedding:
    """Shared scalar->d affine per timestamp plus a fixed sinusoidal table."""

    def __init__(self, lookback: int, width: int, rng: np.random.Generator):
        self.value_weight = Parameter(rng.normal(0.0, 1.0, (1, width)))
        self.value_bias = Parameter(np.zeros(width))
        self.table = positional_table(lookback, width)

    def embed(self, x: np.ndarray) -> Tensor:
        """(..., N, H) raw values -> (..., N, H, d) embedded rows."""
        x = np.asarray(x, dtype=np.float64)
        col = reshape(Tensor(x), x.shape + (1,))
        val = matmul(col, self.value_weight)
        val = add(val, tile_to(self.value_bias, val.shape))
        return add(val, tile_to(Tensor(self.table), val.shape))


class LayerAggregator:
    """Affine (P_l * d) -> d over one layer's concatenated patch summaries."""

    def __init__(self, patch_count: int, width: int, rng: np.random.Generator):
        fan_in = patch_count * width
        self.weight = Parameter(rng.normal(0.0, fan_in ** -0.5, (fan_in, width)))
        self.bias = Parameter(np.zeros(width))

    def __call__(self, patch_summaries: Tensor) -> Tensor:
        lead = patch_summaries.shape[:-2]
        p, d = patch_summaries.shape[-2], patch_summaries.shape[-1]
        if p * d != self.weight.shape[0]:
            raise ConfigurationError(
                f"aggregator expects width {self.weight.shape[0]}, got {p} patches x {d}"
            )
        flat = reshape(patch_summaries, lead + (p * d,))
        out = matmul(flat, self.weight)
        return add(out, tile_to(self.bias, out.shape))


class Predictor:
    """Two affine maps with tanh between, shared across variables."""

    def __init__(self, in_dim: int, horizon: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden if hidden is not None else 4 * in_dim
        self.w1 = Parameter(rng.normal(0.0, in_dim ** -0.5, (in_dim, hidden)))
        self.b1 = Parameter(np.zeros(hidden))
        self.w2 = Parameter(rng.normal(0.0, hidden ** -0.5, (hidden, horizon)))
        self.b2 = Parameter(np.zeros(horizon))

    def __call__(self, features: Tensor) -> Tensor:
        h = matmul(features, self.w1)
        h = tanh(add(h, tile_to(self.b1, h.shape)))
        out = matmul(h, self.w2)
        return add(out, tile_to(self.b2, out.shape))


class _Layer:
    """Per-layer parameter bundle; projections depend on the vsm mode."""

    def __init__(self):
        self.queries: list[Parameter] = []
        self.gate: RecurrentGate | None = None
        self.w_key: Parameter | None = None
        self.w_value: Parameter | None = None
        self.naive: vsm.PerVariableProjections | None = None
        self.gen_key: vsm.CoreGenerator | None = None
        self.gen_value: vsm.CoreGenerator | None = None
        self.factors_key: vsm.ProjectionFactors | None = None
        self.factors_value: vsm.ProjectionFactors | None = None
        self.aggregator: LayerAggregator | None = None


class Forecaster:
    """The full model: embed, run the shrinking attention stack, predict.

    Construction is a pure function of the config (seeded init, fixed
    order), and `forward` is a pure function of parameters and input, so
    identical seeds give bit-identical outputs.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.layer_sizes = validate_config(config)
        rng = np.random.default_rng(config.seed)
        d = config.hidden_dim
        n = config.n_vars
        self._params: dict[str, Parameter] = {}

        self.embedding = InputEmbedding(config.lookback, d, rng)
        self._register("embed.value_weight", self.embedding.value_weight)
        self._register("embed.value_bias", self.embedding.value_bias)

        bank = PatchQueryBank(self.layer_sizes, config.patch_sizes, n, d, rng)
        self.memory: vsm.VariableMemory | None = None
        if config.vsm == "light":
            self.memory = vsm.VariableMemory(n, config.memory_dim, rng)
            self._register("memory.values", self.memory.values)

        self.layers: list[_Layer] = []
        for li, (t, s) in enumerate(zip(self.layer_sizes, config.patch_sizes)):
            layer = _Layer()
            layer.queries = bank.layers[li]
            for pi, q in enumerate(layer.queries):
                self._register(f"layer{li}.query{pi}", q)
            layer.gate = RecurrentGate.init(d, rng)
            self._register(f"layer{li}.gate.w_content", layer.gate.w_content)
            self._register(f"layer{li}.gate.b_content", layer.gate.b_content)
            self._register(f"layer{li}.gate.w_ratio", layer.gate.w_ratio)
            self._register(f"layer{li}.gate.b_ratio", layer.gate.b_ratio)
            if config.vsm == "off":
                std = d ** -0.5
                layer.w_key = Parameter(rng.normal(0.0, std, (d, d)))
                layer.w_value = Parameter(rng.normal(0.0, std, (d, d)))
                self._register(f"layer{li}.key_proj", layer.w_key)
                self._register(f"layer{li}.value_proj", layer.w_value)
            elif config.vsm == "naive":
                layer.naive = vsm.PerVariableProjections(n, d, rng)
                self._register(f"layer{li}.key_proj_per_var", layer.naive.w_key)
                self._register(f"layer{li}.value_proj_per_var", layer.naive.w_value)
            else:
                layer.gen_key = vsm.CoreGenerator.init(config.memory_dim, config.core_dim, rng)
                layer.gen_value = vsm.CoreGenerator.init(config.memory_dim, config.core_dim, rng)
                layer.factors_key = vsm.ProjectionFactors.init(d, config.core_dim, rng)
                layer.factors_value = vsm.ProjectionFactors.init(d, config.core_dim, rng)
                self._register(f"layer{li}.key_gen.weight", layer.gen_key.weight)
                self._register(f"layer{li}.key_gen.bias", layer.gen_key.bias)
                self._register(f"layer{li}.value_gen.weight", layer.gen_value.weight)
                self._register(f"layer{li}.value_gen.bias", layer.gen_value.bias)
                self._register(f"layer{li}.key_factors.left", layer.factors_key.left)
                self._register(f"layer{li}.key_factors.right", layer.factors_key.right)
                self._register(f"layer{li}.value_factors.left", layer.factors_value.left)
                self._register(f"layer{li}.value_factors.right", layer.factors_value.right)
            layer.aggregator = LayerAggregator(t // s, d, rng)
            self._register(f"layer{li}.agg.weight", layer.aggregator.weight)
            self._register(f"layer{li}.agg.bias", layer.aggregator.bias)
            self.layers.append(layer)

        in_dim = len(self.layers) * d if config.multiscale else d
        self.predictor = Predictor(in_dim, config.horizon, rng, hidden=4 * d)
        self._register("predictor.w1", self.predictor.w1)
        self._register("predictor.b1", self.predictor.b1)
        self._register("predictor.w2", self.predictor.w2)
        self._register("predictor.b2", self.predictor.b2)

    def _register(self, name: str, param: Parameter):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = param

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return list(self._params.items())

    def parameter_list(self) -> list[Parameter]:
        return list(self._params.values())

    def _layer_projections(self, layer: _Layer) -> tuple[Tensor, Tensor]:
        if self.config.vsm == "off":
            return layer.w_key, layer.w_value
        if self.config.vsm == "naive":
            return layer.naive.w_key, layer.naive.w_value
        return vsm.materialize_projections(
            self.memory.values, layer.gen_key, layer.gen_value, layer.factors_key, layer.factors_value
        )

    def run_layers(self, embedded: Tensor) -> list[Tensor]:
        """Attention stack only: embedded (..., N, T_1, d) -> per-layer (..., N, d)."""
        per_layer = []
        cur = embedded
        for layer in self.layers:
            wk, wv = self._layer_projections(layer)
            summaries = patch_layer_forward(cur, layer.queries, wk, wv, layer.gate, self.config.recurrent)
            per_layer.append(layer.aggregator(summaries))
            cur = summaries
        return per_layer

    def forward(self, x: np.ndarray) -> Tensor:
        """(N, H) or (B, N, H) raw input -> (N, F) or (B, N, F) forecast."""
        x = np.asarray(x, dtype=np.float64)
        expect = (self.config.n_vars, self.config.lookback)
        if x.ndim not in (2, 3) or x.shape[-2:] != expect:
            raise ConfigurationError(f"input shape {x.shape} does not end with {expect}")
        embedded = self.embedding.embed(x)
        per_layer = self.run_layers(embedded)
        features = concat(per_layer, axis=-1) if self.config.multiscale else per_layer[-1]
        return self.predictor(features)


def complexity_probe(cfg: ModelConfig) -> dict:
    """Closed-form cost of one forward pass; allocates nothing.

    `attention_score_count` is exact (one score per real timestamp per
    layer); the flop figure is a per-op estimate of multiply-adds.
    """
    sizes = validate_config(cfg)
    n, d, f = cfg.n_vars, cfg.hidden_dim, cfg.horizon
    m, a = cfg.memory_dim, cfg.core_dim
    scores = n * sum(sizes)
    flops = n * cfg.lookback * 3 * d  # value projection + positional add
    for t, s in zip(sizes, cfg.patch_sizes):
        p = t // s
        if cfg.vsm == "light":
            flops += 2 * (2 * n * m * a * a + 2 * n * d * a * a + 2 * n * d * a * d)
        flops += 2 * (2 * n * t * d * d)        # key and value projections
        flops += 2 * n * t * d + 5 * n * t      # scores and softmax
        flops += 2 * n * t * d                  # weighted sums
        if cfg.recurrent:
            flops += (p - 1) * n * (4 * d * d + 8 * d)
        flops += 2 * n * p * d * d + n * d      # aggregation
    in_dim = len(sizes) * d if cfg.multiscale else d
    hidden = 4 * d
    flops += n * (2 * in_dim * hidden + 2 * hidden * f + hidden + f)
    return {"attention_score_count": scores, "total_flop_estimate": flops}


def canonical_score_count(cfg: ModelConfig) -> int:
    """Reference count for full self-attention over the same input: N * H^2."""
    return cfg.n_vars * cfg.lookback * cfg.lookback


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"TRIF1"

_CONFIG_FIELDS = (
    ("h", "lookback"),
    ("f", "horizon"),
    ("n", "n_vars"),
    ("d", "hidden_dim"),
    ("m", "memory_dim"),
    ("a", "core_dim"),
)


def _config_to_text(cfg: ModelConfig) -> str:
    lines = [f"{key}={getattr(cfg, attr)}" for key, attr in _CONFIG_FIELDS]
    lines.append("patch_sizes=" + ",".join(str(s) for s in cfg.patch_sizes))
    lines.append(f"vsm={cfg.vsm}")
    lines.append(f"recurrent={'true' if cfg.recurrent else 'false'}")
    lines.append(f"multiscale={'true' if cfg.multiscale else 'false'}")
    lines.append(f"seed={cfg.seed}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        cfg = ModelConfig(
            lookback=int(kv["h"]),
            horizon=int(kv["f"]),
            n_vars=int(kv["n"]),
            hidden_dim=int(kv["d"]),
            memory_dim=int(kv["m"]),
            core_dim=int(kv["a"]),
            patch_sizes=tuple(int(s) for s in kv["patch_sizes"].split(",")),
            vsm=kv["vsm"],
            recurrent=kv["recurrent"] == "true",
            multiscale=kv["multiscale"] == "true",
            seed=int(kv["seed"]),
        )
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"malformed checkpoint config block: {e}") from e
    return cfg


def save_checkpoint(path, model: Forecaster, extra_arrays: dict | None = None) -> None:
    """Write magic, config block, then (name, rank, dims, float64 LE) records."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        cfg_bytes = _config_to_text(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        records = list(model.named_parameters())
        for name, arr in (extra_arrays or {}).items():
            records.append((name, np.asarray(arr, dtype=np.float64)))
        for name, value in records:
            data = value.data if isinstance(value, Tensor) else value
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    """Read a checkpoint back into (config, {name: array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)

    def take(count):
        nonlocal off
        piece = blob[off: off + count]
        if len(piece) != count:
            raise ConfigurationError(f"{path} is truncated")
        off += count
        return piece

    (cfg_len,) = struct.unpack("<I", take(4))
    config = _config_from_text(take(cfg_len).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(count * 8)
        arrays[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return config, arrays


def model_from_checkpoint(path) -> tuple[Forecaster, dict]:
    """Rebuild a model from a checkpoint; non-parameter records come back separately."""
    config, arrays = load_checkpoint(path)
    model = Forecaster(config)
    extras = {}
    for name, arr in arrays.items():
        param = model._params.get(name)
        if param is None:
            extras[name] = arr
            continue
        if param.shape != arr.shape:
            raise ConfigurationError(f"checkpoint record {name!r} has shape {arr.shape}, expected {param.shape}")
        np.copyto(param.data, arr)
    missing = [name for name in model._params if name not in arrays]
    if missing:
        raise ConfigurationError(f"checkpoint is missing parameters: {missing[:3]}...")
    return model, extras


__all__ = [
    "ModelConfig",
    "Forecaster",
    "validate_config",
    "positional_table",
    "InputEmbedding",
    "LayerAggregator",
    "Predictor",
    "complexity_probe",
    "canonical_score_count",
    "CHECKPOINT_MAGIC",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
]
