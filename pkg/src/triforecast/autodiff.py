"""Dense float64 tensors with reverse-mode differentiation and Adam.

Deliberately small. No broadcasting: binary ops demand identical shapes and
`tile_to` / `reshape` are the explicit escape hatches, so shape errors stay
loud. Every tensor is a node in an acyclic graph; `backward` walks a fixed
topological order, which makes gradients bit-reproducible. NaN or Inf
anywhere is treated as corruption and raises immediately.
"""

from __future__ import annotations

import numpy as np


class ConfigurationError(ValueError):
    """Shape or configuration violation."""


class NonFiniteError(ArithmeticError):
    """A value became NaN or Inf, which the core refuses to carry."""


_grad_enabled = True


class no_grad:
    """Context manager: skip graph construction; forward values unchanged."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus its position in the differentiation graph.

    `parents` and the vjp closure are only kept when some input requires a
    gradient (and grad mode is on), so constant subtrees fold out of the
    graph. `grad` accumulates additively across backward calls until the
    owner zeroes it.
    """

    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values entering '{op}'")
        keep = bool(parents) and _grad_enabled and any(p.requires_grad for p in parents)
        self.data = arr
        self.grad = None
        self.op = op
        self.parents = tuple(parents) if keep else ()
        self._vjp = vjp if keep else None
        self.requires_grad = bool(requires_grad) or keep

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Learnable tensor carrying its own Adam state.

    Moment buffers share the value's shape and are zero until the first
    step; `step_count` is per-parameter.
    """

    __slots__ = ("m", "v", "step_count")

    def __init__(self, data):
        super().__init__(data, requires_grad=True, op="param")
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step_count = 0


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigurationError(msg)


# ---------------------------------------------------------------------------
# graph engine


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into `.grad` of every node on a grad path.

    Repeated calls without zeroing add up. Propagation uses per-call
    scratch buffers, so a second backward on the same graph exactly doubles
    the gradients rather than compounding stale intermediate values.
    """
    if loss.shape != ():
        raise ConfigurationError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = pending.get(id(parent))
            pending[id(parent)] = pg if acc is None else acc + pg


def zero_grad(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0.0)


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product in one of three explicit forms.

    (p,q) @ (q,r); ND @ 2D applying one matrix along the last axis; or
    batched ND @ ND with identical leading dims. Anything else is a
    configuration error; leading dims are never broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    _require(A.ndim >= 1 and B.ndim >= 2, f"matmul needs ranks >=1 and >=2, got {A.shape} x {B.shape}")
    if B.ndim == 2:
        _require(A.shape[-1] == B.shape[0], f"matmul inner dimensions differ: {A.shape} x {B.shape}")
        out = A @ B

        def vjp(g):
            ga = g @ B.T
            gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, B.shape[1])
            return ga, gb

    else:
        _require(
            A.ndim == B.ndim and A.shape[:-2] == B.shape[:-2],
            f"batched matmul leading dims differ: {A.shape} x {B.shape}",
        )
        _require(A.shape[-1] == B.shape[-2], f"matmul inner dimensions differ: {A.shape} x {B.shape}")
        out = A @ B

        def vjp(g):
            return g @ B.swapaxes(-1, -2), A.swapaxes(-1, -2) @ g

    return Tensor(out, parents=(a, b), vjp=vjp, op="matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape, f"add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data, parents=(a, b), vjp=lambda g: (g, g), op="add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape, f"sub shape mismatch: {a.shape} vs {b.shape}")
    return Tensor(a.data - b.data, parents=(a, b), vjp=lambda g: (g, -g), op="sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape, f"mul shape mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return Tensor(A * B, parents=(a, b), vjp=lambda g: (g * B, g * A), op="mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor(a.data * c, parents=(a,), vjp=lambda g: (g * c,), op="scale")


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor(t, parents=(a,), vjp=lambda g: (g * (1.0 - t * t),), op="tanh")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return Tensor(s, parents=(a,), vjp=lambda g: (g * s * (1.0 - s),), op="sigmoid")


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-shifted for overflow stability."""
    a = as_tensor(a)
    _require(a.ndim >= 1 and a.shape[-1] >= 1, f"softmax_rows needs a non-empty last axis, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return Tensor(y, parents=(a,), vjp=vjp, op="softmax_rows")


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    _require(int(np.prod(shape, dtype=np.int64)) == a.size, f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return Tensor(a.data.reshape(shape), parents=(a,), vjp=lambda g: (g.reshape(old),), op="reshape")


def transpose_last2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    _require(a.ndim >= 2, f"transpose_last2 needs rank >= 2, got {a.shape}")
    return Tensor(
        a.data.swapaxes(-1, -2).copy(),
        parents=(a,),
        vjp=lambda g: (g.swapaxes(-1, -2),),
        op="transpose_last2",
    )


def tile_to(a: Tensor, shape) -> Tensor:
    """Explicitly materialize `a` across new leading axes.

    The source shape must be a suffix of the target shape; the gradient
    sums over the added axes. This is the only expansion the core offers.
    """
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    _require(
        len(shape) >= a.ndim and shape[len(shape) - a.ndim:] == a.shape,
        f"tile_to target {shape} does not end with source shape {a.shape}",
    )
    lead = len(shape) - a.ndim
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def vjp(g):
        return (g.sum(axis=tuple(range(lead))) if lead else g.copy(),)

    return Tensor(out, parents=(a,), vjp=vjp, op="tile_to")


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    _require(len(tensors) >= 1, "concat needs at least one tensor")
    nd = tensors[0].ndim
    ax = axis if axis >= 0 else axis + nd
    _require(0 <= ax < nd, f"concat axis {axis} out of range for rank {nd}")
    for t in tensors[1:]:
        _require(
            t.ndim == nd and t.shape[:ax] == tensors[0].shape[:ax] and t.shape[ax + 1:] == tensors[0].shape[ax + 1:],
            f"concat shape mismatch: {tensors[0].shape} vs {t.shape} on axis {axis}",
        )
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=ax))

    return Tensor(out, parents=tuple(tensors), vjp=vjp, op="concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    ax = axis if axis >= 0 else axis + a.ndim
    _require(0 <= ax < a.ndim, f"slice axis {axis} out of range for rank {a.ndim}")
    _require(0 <= start < stop <= a.shape[ax], f"slice [{start}:{stop}) invalid for axis size {a.shape[ax]}")
    index = (slice(None),) * ax + (slice(start, stop),)
    shape = a.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        z[index] = g
        return (z,)

    return Tensor(a.data[index].copy(), parents=(a,), vjp=vjp, op="slice")


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.size
    _require(n >= 1, "mean of an empty tensor")
    out = np.asarray(a.data.mean())
    return Tensor(out, parents=(a,), vjp=lambda g: (np.full(a.shape, float(g) / n),), op="mean")


def mse(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _require(pred.shape == target.shape, f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean())

    def vjp(g):
        gd = (2.0 * float(g) / n) * diff
        return gd, -gd

    return Tensor(out, parents=(pred, target), vjp=vjp, op="mse")


def mae(pred: Tensor, target: Tensor) -> Tensor:
    # metric only; the sign subgradient keeps the graph uniform but nothing trains on it
    pred, target = as_tensor(pred), as_tensor(target)
    _require(pred.shape == target.shape, f"mae shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean())

    def vjp(g):
        gd = (float(g) / n) * np.sign(diff)
        return gd, -gd

    return Tensor(out, parents=(pred, target), vjp=vjp, op="mae")


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place. Gradients are left untouched."""
    for p in params:
        if p.grad is None:
            raise ConfigurationError("adam_step before backward: gradient not populated")
        p.step_count += 1
        g = p.grad
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step_count)
        v_hat = p.v / (1.0 - beta2 ** p.step_count)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError("adam_step produced a non-finite parameter")


__all__ = [
    "Tensor",
    "Parameter",
    "ConfigurationError",
    "NonFiniteError",
    "no_grad",
    "as_tensor",
    "backward",
    "zero_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "softmax_rows",
    "reshape",
    "transpose_last2",
    "tile_to",
    "concat",
    "slice_axis",
    "mean",
    "mse",
    "mae",
    "adam_step",
]
