"""Differentiable primitives.

Every function accepts :class:`Value` objects or anything ``np.asarray``
understands, broadcasts like numpy where that makes sense, and returns a
new :class:`Value`.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ContractViolation
from .value import Value, as_value, make_node

MASKED_LOGIT = -1e30


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(op: str, *shapes) -> tuple:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {' and '.join(map(str, shapes))} do not broadcast") from None


def _binary(op: str, fn, a: Value, b: Value) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------- arithmetic

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = _binary("add", np.add, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, "add", (a, b), backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = _binary("sub", np.subtract, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, "sub", (a, b), backward)


def neg(a) -> Value:
    a = as_value(a)
    return make_node(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = _binary("mul", np.multiply, a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, "mul", (a, b), backward)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = _binary("div", np.divide, a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, "div", (a, b), backward)


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = _binary("matmul", np.matmul, a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_node(out, "matmul", (a, b), backward)


def power(a, b) -> Value:
    """Elementwise ``a ** b`` for nonnegative ``a``; ``b`` may be differentiable."""
    a, b = as_value(a), as_value(b)
    out = _binary("power", np.power, a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g * b.data * np.power(a.data, b.data - 1.0), a.shape)
        if b.requires_grad:
            positive = a.data > 0
            log_a = np.log(np.where(positive, a.data, 1.0))
            gb = _unbroadcast(np.where(positive, g * out * log_a, 0.0), b.shape)
        return ga, gb

    return make_node(out, "power", (a, b), backward)


def clip_min(a, floor: float) -> Value:
    """``max(a, floor)`` with the gradient routed only where ``a`` is above the floor."""
    a = as_value(a)
    keep = a.data > floor
    return make_node(np.where(keep, a.data, floor), "clip_min", (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- elementwise

def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return make_node(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Value:
    a = as_value(a)
    return make_node(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = expit(a.data)
    return make_node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return make_node(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Value:
    a = as_value(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        return (g * expit(a.data),)

    return make_node(out, "softplus", (a,), backward)


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Value:
    """Max-shifted softmax; positions where ``mask`` is False get exactly zero weight."""
    a = as_value(a)
    logits = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _broadcast_shapes("softmax", logits.shape, mask.shape)
        logits = np.where(mask, logits, MASKED_LOGIT)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, "softmax", (a,), backward)


def dropout_apply(a, keep_mask: np.ndarray, rate: float) -> Value:
    """Inverted dropout with a caller-supplied 0/1 keep mask."""
    a = as_value(a)
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout_apply: rate must be in [0, 1), got {rate}")
    scale = np.asarray(keep_mask, dtype=np.float64) / (1.0 - rate)
    _broadcast_shapes("dropout_apply", a.shape, scale.shape)
    return make_node(a.data * scale, "dropout", (a,), lambda g: (_unbroadcast(g * scale, a.shape),))


def dropout(a, rate: float, rng: Optional[np.random.Generator], training: bool) -> Value:
    if not training or rate == 0.0:
        return as_value(a)
    a = as_value(a)
    keep = rng.random(a.shape) >= rate
    return dropout_apply(a, keep, rate)


# ---------------------------------------------------------------- structural

def concat(values: Sequence, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    if not values:
        raise ContractViolation("concat: nothing to concatenate")
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        shapes = [v.shape for v in values]
        raise ContractViolation(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in values])

    def backward(g):
        grads = []
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if not v.requires_grad:
                grads.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[ax] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return make_node(out, "concat", tuple(values), backward)


def stack(values: Sequence, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    shapes = {v.shape for v in values}
    if len(shapes) != 1:
        raise ContractViolation(f"stack: shapes differ: {sorted(shapes)}")
    out = np.stack([v.data for v in values], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return [np.take(g, i, axis=ax) if v.requires_grad else None for i, v in enumerate(values)]

    return make_node(out, "stack", tuple(values), backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Value:
    a = as_value(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ContractViolation(f"slice: {exc} for shape {a.shape}") from None
    basic = _is_basic_index(index)

    def backward(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return make_node(np.array(out), "slice", (a,), backward)


def reshape(a, shape: tuple) -> Value:
    a = as_value(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return make_node(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis=None, keepdims: bool = False) -> Value:  # noqa: A001 - mirrors numpy
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), "sum", (a,), backward)


def embedding(table, ids) -> Value:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    table = as_value(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(f"embedding: ids outside [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return make_node(table.data[ids], "embedding", (table,), backward)


# ---------------------------------------------------------- domain primitives

def circular_convolve1d(w, kernel, lengths: Optional[np.ndarray] = None) -> Value:
    """``out[i] = sum_o kernel[o] * w[(i - o) mod L]`` over offsets ``o``.

    The kernel covers offsets ``-(K-1)/2 .. (K-1)/2`` in order, so its last
    entry moves mass one position forward. ``lengths`` gives a per-row
    modulus ``L``; positions at or beyond it are padding and come out as 0.
    """
    w, kernel = as_value(w), as_value(kernel)
    n, k = w.shape[-1], kernel.shape[-1]
    if k % 2 != 1:
        raise ContractViolation(f"circular_convolve1d: kernel width must be odd, got {k}")
    if w.shape[:-1] != kernel.shape[:-1]:
        raise ContractViolation(f"circular_convolve1d: batch shapes differ: {w.shape} vs {kernel.shape}")
    batch_shape = w.shape[:-1]
    rows = int(np.prod(batch_shape)) if batch_shape else 1
    wf = w.data.reshape(rows, n)
    sf = kernel.data.reshape(rows, k)
    if lengths is None:
        lens = np.full(rows, n)
    else:
        lens = np.asarray(lengths).reshape(rows)
        if lens.min() < 1 or lens.max() > n:
            raise ContractViolation(f"circular_convolve1d: lengths must lie in [1, {n}]")
    offsets = np.arange(k) - k // 2
    pos = np.arange(n)
    valid = pos[None, :] < lens[:, None]
    src = (pos[None, None, :] - offsets[None, :, None]) % lens[:, None, None]
    src = np.where(valid[:, None, :], src, pos[None, None, :])
    dst = (pos[None, None, :] + offsets[None, :, None]) % lens[:, None, None]
    dst = np.where(valid[:, None, :], dst, pos[None, None, :])
    rows_ix = np.arange(rows)[:, None, None]
    gathered = wf[rows_ix, src]
    out = np.einsum("rk,rkn->rn", sf, gathered) * valid

    def backward(g):
        gf = g.reshape(rows, n) * valid
        gw = gk = None
        if w.requires_grad:
            gw = (np.einsum("rk,rkn->rn", sf, gf[rows_ix, dst]) * valid).reshape(w.shape)
        if kernel.requires_grad:
            gk = np.einsum("rn,rkn->rk", gf, gathered).reshape(kernel.shape)
        return gw, gk

    return make_node(out.reshape(w.shape), "circular_convolve1d", (w, kernel), backward)


def cosine_similarity(u, v, eps: float = 1e-8) -> Value:
    """``u.v / ((|u| + eps)(|v| + eps))`` along the last axis, broadcasting the rest."""
    u, v = as_value(u), as_value(v)
    if u.shape[-1] != v.shape[-1]:
        raise ContractViolation(f"cosine_similarity: vector widths differ: {u.shape} vs {v.shape}")
    _broadcast_shapes("cosine_similarity", u.shape[:-1], v.shape[:-1])
    nu = np.sqrt(np.einsum("...i,...i->...", u.data, u.data))[..., None]
    nv = np.sqrt(np.einsum("...i,...i->...", v.data, v.data))[..., None]
    a, b = nu + eps, nv + eps
    out = (u.data * v.data).sum(-1, keepdims=True) / (a * b)

    def backward(g):
        g = g[..., None]
        coef = g / (a * b)
        g_out = g * out
        gu = gv = None
        if u.requires_grad:
            radial = g_out / (a * np.where(nu > 0, nu, 1.0))
            gu = _unbroadcast(coef * v.data - radial * u.data, u.shape)
        if v.requires_grad:
            radial = g_out / (b * np.where(nv > 0, nv, 1.0))
            gv = _unbroadcast(coef * u.data - radial * v.data, v.shape)
        return gu, gv

    return make_node(out[..., 0], "cosine_similarity", (u, v), backward)


def cross_entropy(logits, targets, weights=None) -> Value:
    """Weighted sum over rows of ``-log softmax(logits)[target]``."""
    logits = as_value(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ContractViolation(f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}")
    rows = np.arange(logits.shape[0])
    wts = np.ones(logits.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[rows, targets]
    out = np.asarray((wts * nll).sum())

    def backward(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[rows, targets] -= 1.0
        return (g * wts[:, None] * probs,)

    return make_node(out, "cross_entropy", (logits,), backward)


def log_softmax(a, axis: int = -1) -> np.ndarray:
    """Plain numpy log-softmax for decoding; not differentiable."""
    a = a.data if isinstance(a, Value) else np.asarray(a)
    shifted = a - a.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


PRIMITIVES = {
    "matrix-multiply": matmul,
    "add": add,
    "multiply": mul,
    "divide": div,
    "exponential": exp,
    "power": power,
    "logistic-sigmoid": sigmoid,
    "hyperbolic-tangent": tanh,
    "softplus": softplus,
    "softmax-over-axis": softmax,
    "concatenate": concat,
    "slice": getitem,
    "sum-over-axis": sum,
    "circular-convolve-1d": circular_convolve1d,
    "cosine-similarity": cosine_similarity,
    "dropout-mask-apply": dropout_apply,
}


def primitive_forward(kind: str, *inputs, **options) -> Value:
    """Apply a primitive by its catalogue name, e.g. ``"softmax-over-axis"``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractViolation(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **options)
