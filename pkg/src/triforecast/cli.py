"""Command line entry point: train, eval, bench, export-memories.

Runs are configured by a flat `key = value` file plus repeatable
`--set key=value` overrides; unknown keys are rejected. Exit codes are a
stable contract: 0 success, 2 configuration/shape error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .attention import AttentionProjections, canonical_self_attention, count_attention_ops
from .autodiff import ConfigurationError, NonFiniteError, Tensor, no_grad
from .data import (
    DataError,
    SplitSpec,
    StandardizeStats,
    apply_stats,
    fit_stats,
    load_csv,
    split,
    synth,
    windows,
)
from .model import (
    Forecaster,
    ModelConfig,
    canonical_score_count,
    complexity_probe,
    load_checkpoint,
    model_from_checkpoint,
)
from .training import TrainConfig, evaluate, persistence_baseline, train
from .vsm import export_memories_csv

BENCH_MAX_DEPTH = 5


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _parse_patches(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigurationError(f"patch_sizes must be a comma list of integers, got {text!r}") from None


def _parse_vsm(text: str) -> str:
    mode = text.strip().lower()
    if mode not in ("off", "naive", "light"):
        raise ConfigurationError(f"model.vsm must be off, naive, or light, got {text!r}")
    return mode


CONFIG_KEYS = {
    "data.path": str,
    "data.synth.n": int,
    "data.synth.t": int,
    "data.synth.seed": int,
    "data.synth.heterogeneity": float,
    "split.train": float,
    "split.val": float,
    "split.test": float,
    "model.h": int,
    "model.f": int,
    "model.d": int,
    "model.m": int,
    "model.a": int,
    "model.patch_sizes": _parse_patches,
    "model.vsm": _parse_vsm,
    "model.recurrent": _parse_bool,
    "model.multiscale": _parse_bool,
    "model.seed": int,
    "train.lr": float,
    "train.batch": int,
    "train.max_epochs": int,
    "train.patience": int,
    "out.dir": str,
}

CONFIG_DEFAULTS = {
    "data.synth.seed": 0,
    "data.synth.heterogeneity": 1.0,
    "split.train": 0.6,
    "split.val": 0.2,
    "split.test": 0.2,
    "model.d": 32,
    "model.m": 5,
    "model.a": 5,
    "model.vsm": "light",
    "model.recurrent": True,
    "model.multiscale": True,
    "model.seed": 0,
    "train.lr": 1e-4,
    "train.batch": 32,
    "train.max_epochs": 10,
    "train.patience": 3,
}


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines -> raw string dict; '#' starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigurationError(f"line {lineno}: duplicate config key {key!r}")
        raw[key] = value.strip()
    return raw


def resolve_config(raw: dict) -> dict:
    """Typed values with defaults filled in."""
    resolved = dict(CONFIG_DEFAULTS)
    for key, text in raw.items():
        parser = CONFIG_KEYS[key]
        try:
            resolved[key] = parser(text) if parser is not str else text
        except ValueError:
            raise ConfigurationError(f"config key {key!r}: cannot parse {text!r}") from None
    return resolved


def load_run_config(path, overrides) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    raw = parse_config_text(text)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"--set: unknown config key {key!r}")
        raw[key] = value.strip()
    return resolve_config(raw)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def snapshot_config(resolved: dict) -> str:
    return "\n".join(f"{k} = {_format_value(resolved[k])}" for k in sorted(resolved)) + "\n"


def _build_table(resolved: dict):
    has_path = "data.path" in resolved
    has_synth = "data.synth.n" in resolved or "data.synth.t" in resolved
    if has_path and has_synth:
        raise ConfigurationError("config sets both data.path and data.synth.*; pick one source")
    if has_path:
        return load_csv(resolved["data.path"])
    if "data.synth.n" not in resolved or "data.synth.t" not in resolved:
        raise ConfigurationError("synthetic data needs both data.synth.n and data.synth.t")
    return synth(
        resolved["data.synth.n"],
        resolved["data.synth.t"],
        seed=resolved["data.synth.seed"],
        heterogeneity=resolved["data.synth.heterogeneity"],
    )


def _require_keys(resolved: dict, keys) -> None:
    missing = [k for k in keys if k not in resolved]
    if missing:
        raise ConfigurationError(f"config is missing required keys: {missing}")


def _prepare_splits(table, resolved, lookback, horizon):
    spec = SplitSpec(resolved["split.train"], resolved["split.val"], resolved["split.test"])
    train_seg, val_seg, test_seg = split(table, spec, min_rows=lookback + horizon)
    stats = fit_stats(train_seg.values, train_seg.columns)
    parts = tuple(
        windows(apply_stats(seg.values, stats), lookback, horizon) for seg in (train_seg, val_seg, test_seg)
    )
    return parts, stats


def _model_config_from_resolved(resolved: dict, n_vars: int) -> ModelConfig:
    return ModelConfig(
        lookback=resolved["model.h"],
        horizon=resolved["model.f"],
        n_vars=n_vars,
        hidden_dim=resolved["model.d"],
        memory_dim=resolved["model.m"],
        core_dim=resolved["model.a"],
        patch_sizes=resolved["model.patch_sizes"],
        vsm=resolved["model.vsm"],
        recurrent=resolved["model.recurrent"],
        multiscale=resolved["model.multiscale"],
        seed=resolved["model.seed"],
    )


def cmd_train(args) -> int:
    resolved = load_run_config(args.config, args.set)
    _require_keys(resolved, ("model.h", "model.f", "model.patch_sizes", "out.dir"))
    table = _build_table(resolved)
    lookback, horizon = resolved["model.h"], resolved["model.f"]
    (train_w, val_w, _test_w), stats = _prepare_splits(table, resolved, lookback, horizon)
    model = Forecaster(_model_config_from_resolved(resolved, table.n_vars))
    train_cfg = TrainConfig(
        lr=resolved["train.lr"],
        batch_size=resolved["train.batch"],
        max_epochs=resolved["train.max_epochs"],
        patience=resolved["train.patience"],
        seed=resolved["model.seed"],
    )
    out_dir = Path(resolved["out.dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.ckpt"
    extras = {"standardize.mean": stats.mean, "standardize.std": stats.std}
    history = train(model, train_w, val_w, train_cfg, checkpoint_path=ckpt, checkpoint_extras=extras)
    (out_dir / "history.json").write_text(json.dumps(history.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / "resolved_config.txt").write_text(snapshot_config(resolved), encoding="utf-8")
    best = history.best
    print(f"best epoch {history.best_epoch}: val mse {best.val_mse!r}, val mae {best.val_mae!r}")
    print(f"wrote {ckpt} and {out_dir / 'history.json'}")
    return 0


def cmd_eval(args) -> int:
    model, extras = model_from_checkpoint(args.checkpoint)
    resolved = load_run_config(args.config, args.set)
    table = _build_table(resolved)
    if table.n_vars != model.config.n_vars:
        raise ConfigurationError(
            f"checkpoint was trained on {model.config.n_vars} variables but data has {table.n_vars}"
        )
    spec = SplitSpec(resolved["split.train"], resolved["split.val"], resolved["split.test"])
    lookback, horizon = model.config.lookback, model.config.horizon
    segments = dict(zip(("train", "val", "test"), split(table, spec, min_rows=lookback + horizon)))
    if "standardize.mean" in extras and "standardize.std" in extras:
        stats = StandardizeStats(extras["standardize.mean"], extras["standardize.std"])
    else:
        stats = fit_stats(segments["train"].values, table.columns)
    segment = segments[args.split]
    eval_w = windows(apply_stats(segment.values, stats), lookback, horizon)
    metrics = evaluate(model, eval_w)
    baseline = persistence_baseline(eval_w)
    payload = json.dumps({"mse": metrics["mse"], "mae": metrics["mae"]})
    print(payload)
    print(f"persistence baseline: {json.dumps(baseline)}")
    out_path = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_metrics.json"
    out_path.write_text(payload + "\n", encoding="utf-8")
    return 0


def bench_depth(lookback: int) -> int:
    return min(BENCH_MAX_DEPTH, int(math.floor(math.log(lookback, 4))))


def run_bench(h_values, n_vars: int = 1, width: int = 32, reps: int = 5, seed: int = 0) -> list[dict]:
    """Median forward seconds for the patch stack vs the quadratic baseline.

    Both mechanisms consume the same precomputed embeddings; nothing
    trains, and the graph is disabled for timing purity.
    """
    rows = []
    rng = np.random.default_rng(seed)
    for h in h_values:
        depth = bench_depth(h)
        if depth < 1 or h % (4 ** depth) != 0:
            raise ConfigurationError(
                f"lookback {h} is invalid under the bench depth policy (patch size 4, depth {depth})"
            )
        cfg = ModelConfig(
            lookback=h, horizon=1, n_vars=n_vars, hidden_dim=width,
            patch_sizes=(4,) * depth, vsm="off", seed=seed,
        )
        model = Forecaster(cfg)
        proj = AttentionProjections.init(width, rng)
        x = rng.standard_normal((n_vars, h))
        with no_grad():
            embedded = model.embedding.embed(x)
            per_var = [Tensor(embedded.data[i]) for i in range(n_vars)]

            def run_patch():
                model.run_layers(embedded)

            def run_canonical():
                for xe in per_var:
                    canonical_self_attention(xe, proj)

            with count_attention_ops() as counter:
                run_patch()
            patch_scores = counter.scores
            with count_attention_ops() as counter:
                run_canonical()
            canonical_scores = counter.scores
            for fn, mechanism, scores in (
                (run_patch, "patch", patch_scores),
                (run_canonical, "canonical", canonical_scores),
            ):
                fn()  # warmup
                times = []
                for _ in range(reps):
                    t0 = time.perf_counter()
                    fn()
                    times.append(time.perf_counter() - t0)
                rows.append(
                    {
                        "h": h,
                        "mechanism": mechanism,
                        "median_forward_seconds": statistics.median(times),
                        "attention_score_count": scores,
                    }
                )
        probe = complexity_probe(cfg)
        expected = probe["attention_score_count"]
        if patch_scores != expected:
            raise ConfigurationError(
                f"instrumented patch score count {patch_scores} disagrees with probe {expected}"
            )
        if canonical_scores != canonical_score_count(cfg):
            raise ConfigurationError("instrumented canonical score count disagrees with N*H^2")
    return rows


def loglog_slope(pairs) -> float:
    xs = np.log([p[0] for p in pairs])
    ys = np.log([p[1] for p in pairs])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


def cmd_bench(args) -> int:
    try:
        h_values = [int(h) for h in args.h_list.split(",")]
    except ValueError:
        raise ConfigurationError(f"--h-list must be a comma list of integers, got {args.h_list!r}") from None
    rows = run_bench(h_values, n_vars=args.n, width=args.d, reps=args.reps, seed=args.seed)
    lines = ["h,mechanism,median_forward_seconds,attention_score_count"]
    for row in rows:
        lines.append(
            f"{row['h']},{row['mechanism']},{row['median_forward_seconds']!r},{row['attention_score_count']}"
        )
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    print(csv_text, end="")
    if len(h_values) >= 2:
        for mechanism in ("patch", "canonical"):
            pairs = [(r["h"], r["median_forward_seconds"]) for r in rows if r["mechanism"] == mechanism]
            print(f"log-log slope ({mechanism}): {loglog_slope(pairs):.3f}")
    return 0


def cmd_export_memories(args) -> int:
    config, arrays = load_checkpoint(args.checkpoint)
    if config.vsm != "light" or "memory.values" not in arrays:
        raise ConfigurationError("no memories in checkpoint")
    export_memories_csv(arrays["memory.values"], args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triforecast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config")
    p_train.add_argument("--config", required=True, help="flat key = value run config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a data config")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="val")
    p_eval.add_argument("--out", default=None, help="metrics JSON path (default: next to checkpoint)")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="time the patch stack against the quadratic baseline")
    p_bench.add_argument("--h-list", required=True, help="comma list of lookback lengths")
    p_bench.add_argument("--reps", type=int, default=5)
    p_bench.add_argument("--n", type=int, default=1, help="number of variables")
    p_bench.add_argument("--d", type=int, default=32, help="hidden width")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, help="CSV output path")
    p_bench.set_defaults(func=cmd_bench)

    p_export = sub.add_parser("export-memories", help="dump a checkpoint's variable memories as CSV")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export_memories)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
