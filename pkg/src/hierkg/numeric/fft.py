"""Circular correlation kernels.

``circ_corr(a, b)[k] = sum_i a[i] * b[(i + k) mod d]``.  The fast path uses
real FFTs (numpy's pocketfft handles any length, prime sizes included);
:func:`circ_corr_naive` is the O(d^2) reference kept for testing.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, as_tensor, make_result


def circ_corr_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    # direct O(d^2) sum, one shift at a time
    for k in range(d):
        out[..., k] = (a * np.roll(b, -k, axis=-1)).sum(axis=-1)
    return out


def _corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    fa = np.fft.rfft(a, axis=-1)
    fb = np.fft.rfft(b, axis=-1)
    return np.fft.irfft(np.conj(fa) * fb, n=d, axis=-1)


def _conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    return np.fft.irfft(np.fft.rfft(a, axis=-1) * np.fft.rfft(b, axis=-1), n=d, axis=-1)


def circ_corr_values(a: np.ndarray, b: np.ndarray, method: str = "fft") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if a.shape[-1] < 1:
        raise ValueError("circular correlation needs d >= 1")
    if method == "naive":
        return circ_corr_naive(*np.broadcast_arrays(a, b))
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    return _corr(a, b)


def circ_corr(a, b, method: str = "fft") -> Tensor:
    """Differentiable circular correlation along the last axis.

    Gradients: ``dL/da = corr(g, b)`` and ``dL/db = conv(g, a)``.
    """
    a, b = as_tensor(a), as_tensor(b)
    out = circ_corr_values(a.data, b.data, method)

    def backward(g):
        if a.requires_grad:
            ga = _corr(g, np.broadcast_to(b.data, g.shape))
            a._accumulate(_reduce_to(ga, a.shape))
        if b.requires_grad:
            gb = _conv(g, np.broadcast_to(a.data, g.shape))
            b._accumulate(_reduce_to(gb, b.shape))

    return make_result(out, (a, b), backward)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    from .ops import _unbroadcast
    return _unbroadcast(g, shape)


def correlation_aggregate(nodes, relations, src: np.ndarray, rel: np.ndarray, dst: np.ndarray,
                          n_out: int, weights: np.ndarray | None = None,
                          groups: np.ndarray | None = None, n_groups: int = 1) -> Tensor:
    """Sum correlation messages per receiving node.

    ``out[dst[e]] += w[e] * circ_corr(nodes[src[e]], relations[rel[e]])``,
    i.e. ``irfft(conj(rfft(h_src)) * rfft(e_rel))``.  Messages are summed in
    the frequency domain so only one inverse transform per output row is
    needed.  With ``groups`` the result has shape ``(n_groups, n_out, d)``
    and edge ``e`` lands in slice ``groups[e]``.
    """
    nodes, relations = as_tensor(nodes), as_tensor(relations)
    src = np.asarray(src, dtype=np.int64)
    rel = np.asarray(rel, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    d = nodes.shape[-1]
    if relations.shape[-1] != d:
        raise ValueError(f"length mismatch: {d} vs {relations.shape[-1]}")
    m = src.shape[0]
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if groups is not None:
        dst = np.asarray(groups, dtype=np.int64) * n_out + dst
    n_rows = n_out * n_groups
    to_dst = sp.csr_matrix((w, (dst, np.arange(m))), shape=(n_rows, m))

    fh = np.fft.rfft(nodes.data, axis=-1)
    fe = np.fft.rfft(relations.data, axis=-1)
    spec = to_dst @ (np.conj(fh[src]) * fe[rel])
    out = np.fft.irfft(spec, n=d, axis=-1) if m else np.zeros((n_rows, d))
    shape = (n_groups, n_out, d) if groups is not None else (n_out, d)

    def backward(g):
        if m == 0:
            return
        g = g.reshape(n_rows, d)
        # adjoint of irfft(X) w.r.t. the half spectrum X, taken on real gradients
        fg = np.fft.rfft(g, axis=-1)
        fg_e = fg[dst] * w[:, None]
        if nodes.requires_grad:
            to_src = sp.csr_matrix((np.ones(m), (src, np.arange(m))), shape=(nodes.shape[0], m))
            gspec = to_src @ (np.conj(fg_e) * fe[rel])
            nodes._accumulate(np.fft.irfft(gspec, n=d, axis=-1))
        if relations.requires_grad:
            to_rel = sp.csr_matrix((np.ones(m), (rel, np.arange(m))),
                                   shape=(relations.shape[0], m))
            gspec = to_rel @ (fg_e * fh[src])
            relations._accumulate(np.fft.irfft(gspec, n=d, axis=-1))

    return make_result(out.reshape(shape), (nodes, relations), backward)
