"""Per-variable key/value projections from compact learned memories.

Instead of learning a full d x d projection per variable (N * d^2 per role),
each variable keeps an m-vector memory; a small generator turns the memory
into an a x a core matrix, and shared left/right factors expand the core to
d x d. Parameter cost drops from quadratic in d per variable to N*m plus a
variable-agnostic overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConfigurationError,
    Parameter,
    Tensor,
    add,
    matmul,
    reshape,
    tanh,
    tile_to,
)


class VariableMemory:
    """One learnable m-vector per variable, shared across all layers."""

    def __init__(self, n_vars: int, memory_dim: int, rng: np.random.Generator):
        if memory_dim < 1:
            raise ConfigurationError("memory_dim must be >= 1")
        self.values = Parameter(rng.normal(0.0, 1.0, (n_vars, memory_dim)))

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def memory_dim(self) -> int:
        return self.values.shape[1]


@dataclass
class CoreGenerator:
    """Affine map from an m-vector memory to an a x a core matrix.

    Affine by default; `activation="tanh"` squashes the core if a caller
    wants a bounded one.
    """

    weight: Parameter
    bias: Parameter
    activation: str = "linear"

    @classmethod
    def init(cls, memory_dim: int, core_dim: int, rng: np.random.Generator, activation: str = "linear"):
        if activation not in ("linear", "tanh"):
            raise ConfigurationError(f"unknown generator activation {activation!r}")
        std = memory_dim ** -0.5
        return cls(
            Parameter(rng.normal(0.0, std, (memory_dim, core_dim * core_dim))),
            Parameter(np.zeros(core_dim * core_dim)),
            activation,
        )

    @property
    def core_dim(self) -> int:
        return int(math.isqrt(self.bias.shape[0]))


@dataclass
class ProjectionFactors:
    """Shared d x a / a x d factors flanking every variable's core."""

    left: Parameter
    right: Parameter

    @classmethod
    def init(cls, width: int, core_dim: int, rng: np.random.Generator):
        if core_dim > width:
            raise ConfigurationError(f"core_dim {core_dim} exceeds width {width}")
        std = width ** -0.5
        return cls(
            Parameter(rng.normal(0.0, std, (width, core_dim))),
            Parameter(rng.normal(0.0, std, (core_dim, width))),
        )


class PerVariableProjections:
    """Ablation alternative: a full d x d matrix per variable per role."""

    def __init__(self, n_vars: int, width: int, rng: np.random.Generator):
        std = width ** -0.5
        self.w_key = Parameter(rng.normal(0.0, std, (n_vars, width, width)))
        self.w_value = Parameter(rng.normal(0.0, std, (n_vars, width, width)))


def generate_core(memory: Tensor, gen: CoreGenerator) -> Tensor:
    """(m,) -> (a, a), or (N, m) -> (N, a, a) for a whole memory bank."""
    a = gen.core_dim
    if memory.shape[-1] != gen.weight.shape[0]:
        raise ConfigurationError(f"memory width {memory.shape} does not match generator {gen.weight.shape}")
    z = matmul(memory, gen.weight)
    z = add(z, tile_to(gen.bias, z.shape))
    if gen.activation == "tanh":
        z = tanh(z)
    return reshape(z, memory.shape[:-1] + (a, a))


def materialize_projections(
    memories: Tensor,
    gen_key: CoreGenerator,
    gen_value: CoreGenerator,
    factors_key: ProjectionFactors,
    factors_value: ProjectionFactors,
) -> tuple[Tensor, Tensor]:
    """Expand every variable's memory into its (d, d) key and value maps.

    Returns two (N, d, d) stacks: left @ core^(i) @ right per role. No query
    stack exists because the patch query replaces it.
    """
    n = memories.shape[0]
    out = []
    for gen, factors in ((gen_key, factors_key), (gen_value, factors_value)):
        core = generate_core(memories, gen)
        d, a = factors.left.shape
        if core.shape != (n, a, a):
            raise ConfigurationError(f"core stack {core.shape} does not match factors {factors.left.shape}")
        left = tile_to(factors.left, (n, d, a))
        right = tile_to(factors.right, (n, a, d))
        out.append(matmul(matmul(left, core), right))
    return out[0], out[1]


def parameter_count(mode: str, n_vars: int, width: int, memory_dim: int, core_dim: int, layers: int) -> int:
    """Key/value-projection parameters owned by each mode.

    agnostic: one (d, d) per role per layer. naive: one per variable.
    light: memories (counted once, they are shared) plus per-layer
    generators (with bias) and left/right factors for both roles.
    """
    for name, v in (("n_vars", n_vars), ("width", width), ("memory_dim", memory_dim),
                    ("core_dim", core_dim), ("layers", layers)):
        if v < 1:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    d2 = width * width
    if mode == "agnostic":
        return layers * 2 * d2
    if mode == "naive":
        return layers * 2 * n_vars * d2
    if mode == "light":
        a2 = core_dim * core_dim
        return (
            n_vars * memory_dim
            + layers * 2 * (memory_dim * a2 + a2)
            + layers * 2 * (2 * width * core_dim)
        )
    raise ConfigurationError(f"unknown projection mode {mode!r}")


def export_memories_csv(memories: np.ndarray, path) -> None:
    """Write the raw N x m memory matrix as CSV, exact to the last bit.

    Header names the m columns var_0..var_{m-1}; values use 17 significant
    digits so float64 round-trips exactly.
    """
    mem = np.asarray(memories, dtype=np.float64)
    if mem.ndim != 2:
        raise ConfigurationError(f"memory matrix must be 2-D, got shape {mem.shape}")
    m = mem.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"var_{j}" for j in range(m)) + "\n")
        for row in mem:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


__all__ = [
    "VariableMemory",
    "CoreGenerator",
    "ProjectionFactors",
    "PerVariableProjections",
    "generate_core",
    "materialize_projections",
    "parameter_count",
    "export_memories_csv",
]
