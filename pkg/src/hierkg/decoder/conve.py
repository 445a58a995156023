"""Convolutional decoder: reshape, stack, convolve, flatten, project, match."""

from __future__ import annotations

import numpy as np

from ..numeric import ParamStore, Tensor, ops

_ACT = {"relu": ops.relu, "tanh": ops.tanh, "identity": lambda x: x}


def grid_shape(d: int) -> tuple[int, int]:
    """Most square factorisation ``a x b = d`` with ``a <= b``."""
    a = int(np.floor(np.sqrt(d)))
    while a > 1 and d % a:
        a -= 1
    return a, d // a


def conv_geometry(d: int, kernel: int) -> tuple[int, int, int, int]:
    """``(rows, cols, out_rows, out_cols)`` of the stacked image and the valid convolution."""
    a, b = grid_shape(d)
    rows, cols = 2 * a, b
    if kernel > rows or kernel > cols:
        raise ValueError(f"d={d} reshapes to a {rows}x{cols} image, too small for a {kernel}x{kernel} kernel")
    return rows, cols, rows - kernel + 1, cols - kernel + 1


def _patch_index(rows: int, cols: int, kernel: int) -> np.ndarray:
    oi, oj = np.meshgrid(np.arange(rows - kernel + 1), np.arange(cols - kernel + 1), indexing="ij")
    ki, kj = np.meshgrid(np.arange(kernel), np.arange(kernel), indexing="ij")
    r = oi.reshape(-1, 1) + ki.reshape(1, -1)
    c = oj.reshape(-1, 1) + kj.reshape(1, -1)
    return r * cols + c


def register_conve_params(store: ParamStore, d: int, channels: int, kernel: int,
                          rng: np.random.Generator) -> None:
    _, _, orow, ocol = conv_geometry(d, kernel)
    store.register("conve.psi", rng.normal(0.0, 1.0 / kernel, size=(channels, kernel, kernel)))
    fan = channels * orow * ocol
    limit = np.sqrt(6.0 / (fan + d))
    store.register("conve.W", rng.uniform(-limit, limit, size=(fan, d)))
    store.register("conve.b", np.zeros(d))


def conve_features(x_a, x_b, psi, W, b, activation: str = "relu") -> Tensor:
    """``act(vec(act([x_a; x_b] * psi)) W + b)`` for row batches ``x_a``, ``x_b`` (``B x d``)."""
    x_a, x_b, psi = ops.as_tensor(x_a), ops.as_tensor(x_b), ops.as_tensor(psi)
    B, d = x_a.shape
    channels, kernel = psi.shape[0], psi.shape[1]
    rows, cols, orow, ocol = conv_geometry(d, kernel)
    a = rows // 2
    img = ops.concat([ops.reshape(x_a, (B, a, cols)), ops.reshape(x_b, (B, a, cols))], axis=1)
    flat = ops.reshape(img, (B, rows * cols))
    patches = ops.index(flat, (slice(None), _patch_index(rows, cols, kernel)))
    conv = ops.matmul(patches, ops.transpose(ops.reshape(psi, (channels, kernel * kernel))))
    act = _ACT[activation]
    hidden = act(conv)
    return act(ops.linear(ops.reshape(hidden, (B, orow * ocol * channels)), W, b))


def conve_score(x_a, x_b, candidates, psi, W, b, activation: str = "relu") -> Tensor:
    """Scores of every candidate row against the pair ``(x_a, x_b)``: ``B x n``."""
    feat = conve_features(x_a, x_b, psi, W, b, activation)
    return ops.matmul(feat, ops.transpose(candidates))
