"""Independent scalar-loop oracles and a central-difference gradient checker.

Everything here is written with explicit Python loops over scalars so it
shares no code path with the vectorized implementations under test.
"""

import math

import numpy as np


def matmul_loops(a, b):
    p, q = a.shape
    q2, r = b.shape
    assert q == q2
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            acc = 0.0
            for k in range(q):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def softmax_rows_loops(x):
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        top = max(flat[i, j] for j in range(flat.shape[1]))
        exps = [math.exp(flat[i, j] - top) for j in range(flat.shape[1])]
        total = sum(exps)
        for j in range(flat.shape[1]):
            out[i, j] = exps[j] / total
    return out.reshape(x.shape)


def elementwise_mul_loops(a, b):
    out = np.zeros_like(a)
    flat_a, flat_b, flat_o = a.ravel(), b.ravel(), out.ravel()
    for i in range(flat_a.size):
        flat_o[i] = flat_a[i] * flat_b[i]
    return out


def mse_loops(pred, target):
    acc = 0.0
    for p, t in zip(pred.ravel(), target.ravel()):
        acc += (p - t) ** 2
    return acc / pred.size


def mae_loops(pred, target):
    acc = 0.0
    for p, t in zip(pred.ravel(), target.ravel()):
        acc += abs(p - t)
    return acc / pred.size


def affine_loops(x, w, b):
    """x (n,) @ w (n, k) + b (k,) with scalar accumulation."""
    n, k = w.shape
    out = np.zeros(k)
    for j in range(k):
        acc = b[j]
        for i in range(n):
            acc += x[i] * w[i, j]
        out[j] = acc
    return out


def canonical_attention_loops(x, w_query, w_key, w_value):
    """Scalar transcription of full self-attention over an (H, d) input."""
    h, d = x.shape
    q = matmul_loops(x, w_query)
    k = matmul_loops(x, w_key)
    v = matmul_loops(x, w_value)
    out = np.zeros((h, d))
    for i in range(h):
        scores = [
            sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(h)
        ]
        top = max(scores)
        exps = [math.exp(s - top) for s in scores]
        total = sum(exps)
        for c in range(d):
            out[i, c] = sum(exps[j] / total * v[j, c] for j in range(h))
    return out


def patch_attention_loops(query, x_patch, w_key, w_value):
    """Scalar transcription of per-variable patch attention.

    query (N, d); x_patch (N, S, d); w_key/w_value (N, d, d). One score per
    real timestamp per variable.
    """
    n, d = query.shape
    s = x_patch.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        keys = matmul_loops(x_patch[i], w_key[i])
        values = matmul_loops(x_patch[i], w_value[i])
        scores = [
            sum(query[i, c] * keys[j, c] for c in range(d)) / math.sqrt(d) for j in range(s)
        ]
        top = max(scores)
        exps = [math.exp(sc - top) for sc in scores]
        total = sum(exps)
        for c in range(d):
            out[i, c] = sum(exps[j] / total * values[j, c] for j in range(s))
    return out


def gated_update_loops(prev_out, next_query, w_content, b_content, w_ratio, b_ratio):
    """Scalar transcription of the recurrent gate: row @ W^T orientation."""
    n, d = prev_out.shape
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(d):
            c = b_content[j] + sum(prev_out[i, k] * w_content[j, k] for k in range(d))
            r = b_ratio[j] + sum(prev_out[i, k] * w_ratio[j, k] for k in range(d))
            out[i, j] = math.tanh(c) * (1.0 / (1.0 + math.exp(-r))) + next_query[i, j]
    return out


def core_generator_loops(memory_row, weight, bias, a):
    """Scalar affine m -> a*a then reshape."""
    flat = affine_loops(memory_row, weight, bias)
    return flat.reshape(a, a)


def triple_matmul_loops(left, core, right):
    return matmul_loops(matmul_loops(left, core), right)


def central_diff_grad(f, array, h=1e-5):
    """d f() / d array by central differences, mutating `array` in place."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        old = array[ix]
        array[ix] = old + h
        f_plus = f()
        array[ix] = old - h
        f_minus = f()
        array[ix] = old
        grad[ix] = (f_plus - f_minus) / (2.0 * h)
    return grad


def grad_mismatch(analytic, numeric, rel_tol=1e-4, abs_floor=1e-8):
    """Max relative error, with coordinates below the absolute floor passing."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff < abs_floor, 0.0, diff / np.maximum(denom, abs_floor))
    return float(rel.max()), rel_tol


def assert_grads_close(analytic, numeric, rel_tol=1e-4, abs_floor=1e-8, label=""):
    worst, tol = grad_mismatch(analytic, numeric, rel_tol, abs_floor)
    assert worst < tol, f"{label}: worst relative gradient error {worst} >= {tol}"
