from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0, frozen: frozenset[str] = frozenset()) -> None:
    """One AdamW update with decoupled weight decay, in place on ``params``.

    Parameters named in ``frozen`` (or without a gradient) are left untouched,
    weight decay included.
    """
    for name, g in grads.items():
        if g is None or name in frozen:
            continue
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in {name} ({bad} entries)")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        if g is None or name in frozen:
            continue
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        data = p.data
        if weight_decay:
            data = data * (1.0 - lr * weight_decay)
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: ParamStore, lr: float = 5e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01) -> None:
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen: set[str] = set()
        self.state = AdamState()

    def freeze(self, *names: str) -> None:
        for n in names:
            if n not in self.params:
                raise KeyError(n)
            self.frozen.add(n)

    def step(self) -> None:
        grads = {name: t.grad for name, t in self.params.items()}
        adamw_step(self.params, grads, self.state, self.lr, self.betas[0], self.betas[1],
                   self.eps, self.weight_decay, frozenset(self.frozen))

    def zero_grad(self) -> None:
        self.params.zero_grad()
