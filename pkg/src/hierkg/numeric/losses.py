from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def smoothed_targets(n: int, gold: np.ndarray, eps: float) -> np.ndarray:
    """Label-smoothed target rows: ``1 - eps`` on gold, ``eps / (n - 1)`` elsewhere."""
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    if np.any(gold < 0) or np.any(gold >= n):
        raise ValueError("gold index outside the candidate range")
    off = eps / (n - 1) if n > 1 else 0.0
    y = np.full((gold.size, n), off)
    y[np.arange(gold.size), gold] = 1.0 - eps if n > 1 else 1.0
    return y


def smoothed_cross_entropy(logits, gold, eps: float = 0.0, reduction: str = "mean") -> Tensor:
    """Cross-entropy of ``softmax(logits)`` against label-smoothed targets.

    ``logits`` is (n,) or (batch, n); ``gold`` holds one index per row.
    """
    logits = as_tensor(logits)
    x = logits.data
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite logits in cross-entropy")
    b, n = x.shape
    y = smoothed_targets(n, gold, eps)
    if y.shape[0] != b:
        raise ValueError(f"{y.shape[0]} gold labels for {b} logit rows")
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per_row = -(y * logp).sum(axis=1)
    if reduction == "mean":
        value, row_scale = per_row.mean(), 1.0 / b
    elif reduction == "sum":
        value, row_scale = per_row.sum(), 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    prob = np.exp(logp)

    def backward(g):
        # rows of y sum to one, so d/dz = softmax - y
        grad = (prob - y) * (float(g) * row_scale)
        logits._accumulate(grad[0] if single else grad)

    return make_result(np.asarray(value), (logits,), backward)
