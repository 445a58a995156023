"""Differentiable operations over :class:`~hierkg.numeric.tensor.Tensor`."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def scatter_rows(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[k]] += values[k]`` for a 1-d index into the leading axis."""
    idx = np.asarray(idx, dtype=np.int64)
    m = idx.shape[0]
    if m == 0:
        return np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    flat = values.reshape(m, -1)
    op = sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))
    out = op @ flat
    return np.asarray(out).reshape((n,) + values.shape[1:])


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data ** 2), b.shape))

    return make_result(a.data / b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: a._accumulate(-g))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_result(a.data * c, (a,), lambda g: a._accumulate(g * c))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: a._accumulate(g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.sin(a.data), (a,), lambda g: a._accumulate(g * np.cos(a.data)))


# ----------------------------------------------------------------------
# activations


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return make_result(a.data * factor, (a,), lambda g: a._accumulate(g * factor))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return make_result(x * cdf, (a,), lambda g: a._accumulate(g * (cdf + x * pdf)))


# ----------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ValueError(f"matmul needs a matrix right operand, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,),
                       lambda g: a._accumulate(np.transpose(g, inverse)))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(original)))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return make_result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def index(a, key) -> Tensor:
    """Generic numpy indexing; the backward pass scatters with ``np.add.at``."""
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accumulate(full)

    return make_result(out, (a,), backward)


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` along axis 0 (embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    flat = idx.reshape(-1)
    out = a.data[flat].reshape(idx.shape + a.shape[1:])

    def backward(g):
        a._accumulate(scatter_rows(flat, g.reshape((flat.size,) + a.shape[1:]), a.shape[0]))

    return make_result(out, (a,), backward)


def segment_sum(a, seg, n: int, weights: np.ndarray | None = None) -> Tensor:
    """``out[seg[k]] += w[k] * a[k]``; ``weights`` is a constant per-row scale."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    vals = a.data if weights is None else a.data * weights.reshape((-1,) + (1,) * (a.ndim - 1))

    def backward(g):
        gg = g[seg]
        if weights is not None:
            gg = gg * weights.reshape((-1,) + (1,) * (a.ndim - 1))
        a._accumulate(gg)

    return make_result(scatter_rows(seg, vals, n), (a,), backward)


def mask_rows(a, keep: np.ndarray) -> Tensor:
    keep = np.asarray(keep, dtype=np.float64).reshape((-1,) + (1,) * (as_tensor(a).ndim - 1))
    return mul(a, Tensor(keep))


# ----------------------------------------------------------------------
# normalisation


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return make_result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    prob = np.exp(out)

    def backward(g):
        a._accumulate(g - prob * g.sum(axis=axis, keepdims=True))

    return make_result(out, (a,), backward)


def segment_softmax(z, seg, n: int) -> Tensor:
    """Softmax of the rows of ``z`` within groups given by ``seg``.

    ``seg`` must be sorted (non-decreasing); each group is normalised
    independently along axis 0, every column separately.
    """
    z = as_tensor(z)
    seg = np.asarray(seg, dtype=np.int64)
    if seg.size == 0:
        return make_result(z.data.copy(), (z,), lambda g: z._accumulate(g))
    if np.any(np.diff(seg) < 0):
        raise ValueError("segment_softmax expects sorted segment ids")
    starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
    gmax = np.maximum.reduceat(z.data, starts, axis=0)
    counts = np.diff(np.r_[starts, seg.size])
    shifted = z.data - np.repeat(gmax, counts, axis=0)
    e = np.exp(shifted)
    denom = np.add.reduceat(e, starts, axis=0)
    out = e / np.repeat(denom, counts, axis=0)

    def backward(g):
        dot = np.add.reduceat(g * out, starts, axis=0)
        z._accumulate(out * (g - np.repeat(dot, counts, axis=0)))

    return make_result(out, (z,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            gx = inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            x._accumulate(gx)

    return make_result(out, (x, gamma, beta), backward)


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return make_result(a.data * mask, (a,), lambda g: a._accumulate(g * mask))
