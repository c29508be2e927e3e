"""Attention blocks: quadratic baseline, linear per-patch attention, gating.

The baseline computes one score per (timestamp, timestamp) pair and exists
as the reference the linear mechanism is checked and benchmarked against.
Patch attention gives every patch a single learnable query row per series
variable, so it computes exactly one score per real timestamp. A gated
recurrent hand-off chains consecutive patches within a layer.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConfigurationError,
    Parameter,
    Tensor,
    add,
    concat,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    slice_axis,
    softmax_rows,
    tanh,
    tile_to,
    transpose_last2,
)


# ---------------------------------------------------------------------------
# instrumentation: honest counts taken while the forward actually runs


class OpCount:
    __slots__ = ("scores", "flops")

    def __init__(self):
        self.scores = 0
        self.flops = 0


_active_count: OpCount | None = None


@contextmanager
def count_attention_ops():
    """Collect score evaluations and a coarse flop tally for enclosed forwards."""
    global _active_count
    prev = _active_count
    counter = OpCount()
    _active_count = counter
    try:
        yield counter
    finally:
        _active_count = prev


def _tally(scores: int, flops: int):
    if _active_count is not None:
        _active_count.scores += scores
        _active_count.flops += flops


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class AttentionProjections:
    """Query/key/value d x d maps for the quadratic baseline."""

    w_query: Parameter
    w_key: Parameter
    w_value: Parameter

    @classmethod
    def init(cls, width: int, rng: np.random.Generator) -> "AttentionProjections":
        std = width ** -0.5
        return cls(
            Parameter(rng.normal(0.0, std, (width, width))),
            Parameter(rng.normal(0.0, std, (width, width))),
            Parameter(rng.normal(0.0, std, (width, width))),
        )


@dataclass
class RecurrentGate:
    """Gate carrying one patch's summary into the next patch's query.

    `w_content`/`b_content` feed the tanh branch, `w_ratio`/`b_ratio` the
    sigmoid branch; both matrices act on the feature axis of each variable
    row (row @ W^T).
    """

    w_content: Parameter
    b_content: Parameter
    w_ratio: Parameter
    b_ratio: Parameter

    @classmethod
    def init(cls, width: int, rng: np.random.Generator) -> "RecurrentGate":
        std = width ** -0.5
        return cls(
            Parameter(rng.normal(0.0, std, (width, width))),
            Parameter(np.zeros(width)),
            Parameter(rng.normal(0.0, std, (width, width))),
            Parameter(np.zeros(width)),
        )


class PatchQueryBank:
    """Learnable per-patch query rows, one (n_vars x d) block per patch per layer.

    A query row attends over its patch and the attended result doubles as
    the patch's summary passed to the next layer, so layer l+1 sees exactly
    P_l = T_l / S_l rows per variable.
    """

    def __init__(self, layer_sizes, patch_sizes, n_vars: int, width: int, rng: np.random.Generator):
        if len(layer_sizes) != len(patch_sizes):
            raise ConfigurationError("one patch size per layer required")
        std = width ** -0.5
        self.layers: list[list[Parameter]] = []
        for t, s in zip(layer_sizes, patch_sizes):
            count = t // s
            self.layers.append([Parameter(rng.normal(0.0, std, (n_vars, width))) for _ in range(count)])


# ---------------------------------------------------------------------------
# forward blocks


def canonical_self_attention(x_embed: Tensor, proj: AttentionProjections) -> Tensor:
    """Reference attention: every timestamp queries every other timestamp.

    Input is (H, d) (leading axes allowed); work and memory grow with H^2.
    """
    h, d = x_embed.shape[-2], x_embed.shape[-1]
    if proj.w_query.shape != (d, d):
        raise ConfigurationError(f"projection width {proj.w_query.shape} does not match embedding width {d}")
    q = matmul(x_embed, proj.w_query)
    k = matmul(x_embed, proj.w_key)
    v = matmul(x_embed, proj.w_value)
    scores = scale(matmul(q, transpose_last2(k)), 1.0 / math.sqrt(d))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    lead = int(np.prod(x_embed.shape[:-2], dtype=np.int64))
    _tally(lead * h * h, lead * (6 * h * d * d + 4 * h * h * d + 5 * h * h))
    return out


def patch_attention(query: Tensor, x_patch: Tensor, w_key: Tensor, w_value: Tensor) -> Tensor:
    """One attention row per variable: the patch query attends over S timestamps.

    query: (..., d); x_patch: (..., S, d); w_key/w_value: (..., d, d) stacked
    per variable (pass identical copies for variable-agnostic projections).
    Exactly S scores are evaluated per leading row, so work is linear in S.
    """
    lead = query.shape[:-1]
    d = query.shape[-1]
    if x_patch.shape[:-2] != lead or x_patch.shape[-1] != d:
        raise ConfigurationError(f"patch shape {x_patch.shape} does not extend query shape {query.shape}")
    if w_key.shape != lead + (d, d) or w_value.shape != lead + (d, d):
        raise ConfigurationError(
            f"projection stacks must be shaped {lead + (d, d)}, got {w_key.shape} and {w_value.shape}"
        )
    s = x_patch.shape[-2]
    keys = matmul(x_patch, w_key)
    values = matmul(x_patch, w_value)
    q = reshape(query, lead + (1, d))
    scores = scale(matmul(q, transpose_last2(keys)), 1.0 / math.sqrt(d))
    weights = softmax_rows(scores)
    out = reshape(matmul(weights, values), lead + (d,))
    rows = int(np.prod(lead, dtype=np.int64))
    _tally(rows * s, rows * (4 * s * d * d + 4 * s * d + 5 * s))
    return out


def gated_update(prev_out: Tensor, next_query: Tensor, gate: RecurrentGate) -> Tensor:
    """tanh(prev W1^T + b1) * sigmoid(prev W2^T + b2) + next_query, per variable row."""
    if prev_out.shape != next_query.shape:
        raise ConfigurationError(f"gate shape mismatch: {prev_out.shape} vs {next_query.shape}")
    d = prev_out.shape[-1]
    content = tanh(add(matmul(prev_out, transpose_last2(gate.w_content)), tile_to(gate.b_content, prev_out.shape)))
    ratio = sigmoid(add(matmul(prev_out, transpose_last2(gate.w_ratio)), tile_to(gate.b_ratio, prev_out.shape)))
    rows = int(np.prod(prev_out.shape[:-1], dtype=np.int64))
    _tally(0, rows * (4 * d * d + 8 * d))
    return add(mul(content, ratio), next_query)


def _lift(t: Tensor, target_shape: tuple) -> Tensor:
    return t if t.shape == target_shape else tile_to(t, target_shape)


def patch_layer_forward(
    x_embed: Tensor,
    queries,
    w_key: Tensor,
    w_value: Tensor,
    gate: RecurrentGate,
    recurrent: bool = True,
) -> Tensor:
    """Run one layer of patch attention over a (..., T, d) input.

    Splits the time axis into len(queries) patches. With `recurrent`,
    patches run left to right and each patch's output gates the next
    patch's learnable query before that patch attends; without it every
    patch is independent (and order-invariant). Returns (..., P, d).
    """
    lead = x_embed.shape[:-2]
    t, d = x_embed.shape[-2], x_embed.shape[-1]
    p = len(queries)
    if p < 1 or t % p != 0:
        raise ConfigurationError(f"divisibility violation: {t} timestamps do not split into {p} patches")
    s = t // p
    wk = _lift(w_key, lead + (d, d))
    wv = _lift(w_value, lead + (d, d))
    outs = []
    q_eff = _lift(queries[0], lead + (d,))
    for i in range(p):
        x_p = slice_axis(x_embed, -2, i * s, (i + 1) * s)
        out_p = patch_attention(q_eff, x_p, wk, wv)
        outs.append(reshape(out_p, lead + (1, d)))
        if i + 1 < p:
            nxt = _lift(queries[i + 1], lead + (d,))
            q_eff = gated_update(out_p, nxt, gate) if recurrent else nxt
    return outs[0] if p == 1 else concat(outs, axis=-2)


__all__ = [
    "AttentionProjections",
    "RecurrentGate",
    "PatchQueryBank",
    "OpCount",
    "count_attention_ops",
    "canonical_self_attention",
    "patch_attention",
    "gated_update",
    "patch_layer_forward",
]
