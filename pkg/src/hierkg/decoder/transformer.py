"""Masked transformer decoder over serialized facts."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numeric import ParamStore, Tensor, ops

DECODERS = ("transformer", "conve-sh", "conve-sf")


@dataclass
class DecoderConfig:
    kind: str = "transformer"
    layers: int = 2
    heads: int = 4
    activation: str = "gelu"
    dropout: float = 0.1
    use_positional: bool = True
    max_len: int = 64
    # ConvE variants
    conve_channels: int = 8
    conve_kernel: int = 3
    conve_activation: str = "relu"

    def __post_init__(self) -> None:
        if self.kind not in DECODERS:
            raise ValueError(f"unknown decoder {self.kind!r}; expected one of {DECODERS}")
        if self.layers < 0 or self.heads < 1:
            raise ValueError("decoder needs layers >= 0 and heads >= 1")
        if self.activation not in _FFN_ACT:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


_FFN_ACT = {"gelu": ops.gelu, "relu": ops.relu, "tanh": ops.tanh}


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def register_transformer_params(store: ParamStore, cfg: DecoderConfig, d: int, rng: np.random.Generator) -> None:
    if d % cfg.heads:
        raise ValueError(f"d={d} is not divisible by {cfg.heads} decoder heads")
    store.register("dec.M", rng.normal(0.0, 1.0 / np.sqrt(d), size=d))
    store.register("dec.pos", rng.normal(0.0, 0.02, size=(cfg.max_len, d)))
    for b in range(cfg.layers):
        p = f"dec{b}."
        store.register(p + "ln1.g", np.ones(d))
        store.register(p + "ln1.b", np.zeros(d))
        for name in ("Wq", "Wk", "Wv", "Wo"):
            store.register(p + name, _glorot(rng, d, d))
            store.register(p + name.replace("W", "b"), np.zeros(d))
        store.register(p + "ln2.g", np.ones(d))
        store.register(p + "ln2.b", np.zeros(d))
        # hidden width equals d
        store.register(p + "ff1.W", _glorot(rng, d, d))
        store.register(p + "ff1.b", np.zeros(d))
        store.register(p + "ff2.W", _glorot(rng, d, d))
        store.register(p + "ff2.b", np.zeros(d))
    store.register("dec.f.W", _glorot(rng, d, d))
    store.register("dec.f.b", np.zeros(d))


def apply_mask(X, mask_pos: np.ndarray, M) -> Tensor:
    """Replace row ``mask_pos[b]`` of every sequence ``X[b]`` with the vector ``M``."""
    X = ops.as_tensor(X)
    B, L, d = X.shape
    sel = np.zeros((B, L, 1))
    sel[np.arange(B), mask_pos, 0] = 1.0
    return ops.add(ops.mul(X, Tensor(1.0 - sel)), ops.mul(Tensor(sel), ops.reshape(M, (1, 1, d))))


def self_attention(x, p: str, params: ParamStore, heads: int, dropout: float, rng, training: bool,
                   return_probs: bool = False):
    B, L, d = x.shape
    dh = d // heads

    def split(t):
        return ops.transpose(ops.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(ops.linear(x, params[p + "Wq"], params[p + "bq"]))
    k = split(ops.linear(x, params[p + "Wk"], params[p + "bk"]))
    v = split(ops.linear(x, params[p + "Wv"], params[p + "bv"]))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = ops.softmax(scores, axis=-1)
    att = ops.dropout(probs, dropout, rng, training)
    ctx = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (B, L, d))
    out = ops.linear(ctx, params[p + "Wo"], params[p + "bo"])
    return (out, probs.data) if return_probs else out


def transformer_decode(X, mask_pos: np.ndarray, params: ParamStore, cfg: DecoderConfig,
                       rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Pre-norm blocks over ``X`` (``B x L x d``, mask already applied); returns ``h_pre`` (``B x d``).

    There is no final normalisation, so zero blocks return the (position
    shifted) mask embedding unchanged.
    """
    X = ops.as_tensor(X)
    B, L, d = X.shape
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len={cfg.max_len}")
    x = X
    if cfg.use_positional:
        x = ops.add(x, ops.index(params["dec.pos"], slice(0, L)))
    x = ops.dropout(x, cfg.dropout, rng, training)
    act = _FFN_ACT[cfg.activation]
    for b in range(cfg.layers):
        p = f"dec{b}."
        h = ops.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        h = self_attention(h, p, params, cfg.heads, cfg.dropout, rng, training)
        x = ops.add(x, ops.dropout(h, cfg.dropout, rng, training))
        h = ops.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        h = ops.linear(act(ops.linear(h, params[p + "ff1.W"], params[p + "ff1.b"])),
                       params[p + "ff2.W"], params[p + "ff2.b"])
        x = ops.add(x, ops.dropout(h, cfg.dropout, rng, training))
    return ops.index(x, (np.arange(B), np.asarray(mask_pos)))


def score_candidates(h_pre, candidates, W_f, b_f) -> Tensor:
    """Logits ``f(h_pre) C^T`` with ``f`` affine; softmax of the result gives the probabilities."""
    candidates = ops.as_tensor(candidates)
    if candidates.shape[0] == 0:
        raise ValueError("empty candidate space")
    return ops.matmul(ops.linear(h_pre, W_f, b_f), ops.transpose(candidates))
