from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|)`` over the whole block (2-norms).

    Blocks whose gradients are both below ``floor`` in norm report the
    absolute difference instead, so exactly-zero gradients do not divide
    rounding noise by zero.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff if scale < floor else diff / scale


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                 entries: np.ndarray | None = None) -> np.ndarray:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for (a subset of) entries."""
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size)
    todo = range(flat.size) if entries is None else entries
    for k in todo:
        old = flat[k]
        flat[k] = old + h
        fp = float(fn().data)
        flat[k] = old - h
        fm = float(fn().data)
        flat[k] = old
        out[k] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def grad_check(fn: Callable[[], Tensor], params: dict[str, Tensor] | Iterable[Tensor],
               h: float = 1e-5, max_entries: int | None = None,
               seed: int = 0) -> dict[str, float]:
    """Compare reverse-mode gradients of the scalar ``fn()`` with central differences.

    Returns the relative error per parameter block.  ``max_entries`` limits
    the number of randomly chosen coordinates probed in large blocks.
    ``fn`` must be deterministic (dropout off).
    """
    if not isinstance(params, dict):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss = fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        entries = None
        if max_entries is not None and p.size > max_entries:
            entries = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        numeric = numeric_grad(fn, p, h, entries)
        if entries is not None:
            a = analytic.reshape(-1)[entries]
            n = numeric.reshape(-1)[entries]
        else:
            a, n = analytic, numeric
        errors[name] = relative_error(a, n)
    return errors


def max_relative_error(fn: Callable[[], Tensor], params, h: float = 1e-5, **kwargs) -> float:
    errs = grad_check(fn, params, h=h, **kwargs)
    return max(errs.values()) if errs else 0.0
