"""Hierarchical encoder: node initialisation, intra-fact attention, inter-fact aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numeric import ParamStore, Tensor, ops
from ..numeric.fft import correlation_aggregate
from .graph import EncoderGraph, SampledEdges

ABLATIONS = ("intra", "inter", "factinit", "gate", "direction")
N_TYPES = 3  # connected, atomic, nested
TYPE_NAMES = ("connected", "atomic", "nested")
INTER_NORMS = ("sum", "mean", "sym")


@dataclass
class EncoderConfig:
    d: int = 64
    layers: int = 2
    intra_heads: int = 4
    intra_dropout: float = 0.1
    inter_dropout: float = 0.1
    inter_activation: str = "tanh"
    inter_norm: str = "sum"          # "sum", "mean" (1/indeg) or "sym" (1/sqrt(deg_i deg_j))
    leaky_slope: float = 0.2
    neighbor_cap: int | None = 64
    fact_init: str = "affine"        # or "affine_tanh"
    ablate: tuple[str, ...] = ()
    nested_gate_drop: bool = False   # force the nested-edge gate to 0
    seed: int = 0

    def __post_init__(self) -> None:
        self.ablate = tuple(self.ablate)
        if self.d < 1 or self.intra_heads < 1 or self.d % self.intra_heads:
            raise ValueError(f"d={self.d} must be a positive multiple of intra_heads={self.intra_heads}")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.neighbor_cap is not None and self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be >= 1")
        bad = set(self.ablate) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablation(s) {sorted(bad)}; expected {ABLATIONS}")
        if self.inter_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.inter_activation!r}")
        if self.inter_norm not in INTER_NORMS:
            raise ValueError(f"unknown inter_norm {self.inter_norm!r}; expected {INTER_NORMS}")
        if self.fact_init not in ("affine", "affine_tanh"):
            raise ValueError(f"unknown fact_init {self.fact_init!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ablate"] = list(self.ablate)
        return out


_ACTIVATIONS = {"tanh": ops.tanh, "relu": ops.relu, "identity": lambda x: x}


@dataclass
class EncoderState:
    H: Tensor                 # all node rows after the last layer
    E: Tensor                 # relation rows after the last layer
    H_r: Tensor               # initial relation-node rows
    H_f: Tensor               # initial fact-node rows
    H0: Tensor                # initial node matrix
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    attention: list[np.ndarray] = field(default_factory=list)


# ----------------------------------------------------------------------
# parameters


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def register_encoder_params(store: ParamStore, cfg: EncoderConfig, n_entities: int, n_relation_rows: int,
                            rng: np.random.Generator, n_fact_rows: int = 0) -> None:
    """Register every encoder parameter; the count depends on the graph only through
    ``n_entities`` and ``n_relation_rows`` (plus ``n_fact_rows`` under the factinit ablation)."""
    d = cfg.d
    store.register("H_a", rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_entities, d)))
    store.register("E", rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_relation_rows, d)))
    store.register("W_r", _glorot(rng, d, d))
    if "factinit" in cfg.ablate:
        store.register("H_f", rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_fact_rows, d)))
    else:
        store.register("f_m.W", _glorot(rng, 3 * d, d))
        store.register("f_m.b", np.zeros(d))
    store.register("t2v.omega", np.ones(1))
    store.register("t2v.w_p", rng.normal(0.0, 1.0, size=(1, d)))
    store.register("t2v.b_p", rng.uniform(-np.pi, np.pi, size=d))
    store.register("t2v.w_np", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)))
    store.register("t2v.b_np", np.zeros(d))
    dh = d // cfg.intra_heads
    for l in range(cfg.layers):
        store.register(f"intra{l}.W_in", _glorot(rng, d, d))
        store.register(f"intra{l}.W_out", _glorot(rng, d, d))
        store.register(f"intra{l}.W", _glorot(rng, dh, 1, shape=(d,)))
        store.register(f"inter{l}.W_forward", _glorot(rng, d, d))
        if "direction" not in cfg.ablate:
            store.register(f"inter{l}.W_reverse", _glorot(rng, d, d))
        store.register(f"inter{l}.W_self", _glorot(rng, d, d))
        store.register(f"inter{l}.W_rel", _glorot(rng, d, d))
        for name in TYPE_NAMES:
            store.register(f"inter{l}.omega_{name}", np.zeros(1))


# ----------------------------------------------------------------------
# initialisation


def init_relation_nodes(E_atomic, W_r) -> Tensor:
    """``H_r = E_a W_r``: one row per relation node."""
    E_atomic, W_r = ops.as_tensor(E_atomic), ops.as_tensor(W_r)
    if E_atomic.shape[-1] != W_r.shape[0]:
        raise ValueError(f"shape mismatch {E_atomic.shape} x {W_r.shape}")
    return ops.matmul(E_atomic, W_r)


def init_fact_nodes(h_head, h_rel, h_tail, W_m, b_m, activation: str = "affine") -> Tensor:
    """``h_f = [h_h; h_r; h_t] W_m + b_m`` for stacked rows of heads, relations and tails."""
    x = ops.concat([h_head, h_rel, h_tail], axis=-1)
    out = ops.linear(x, W_m, b_m)
    return ops.tanh(out) if activation == "affine_tanh" else out


def normalise_times(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Min-max scaling to [0, 1]; a single distinct value maps to 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def time2vec(tau, omega, w_p, b_p, w_np, b_np) -> Tensor:
    """``omega * sin(tau w_p + b_p) + (tau w_np + b_np)`` for a column of scaled times."""
    tau = ops.as_tensor(np.asarray(tau, dtype=np.float64).reshape(-1, 1))
    periodic = ops.sin(ops.add(ops.matmul(tau, w_p), b_p))
    return ops.add(ops.mul(omega, periodic), ops.add(ops.matmul(tau, w_np), b_np))


# ----------------------------------------------------------------------
# message passing


def intra_fact_pass(H, W_in, W_out, W, center: np.ndarray, member: np.ndarray, heads: int,
                    slope: float = 0.2, return_attention: bool = False):
    """Attention inside every fact star.

    Each fact node attends over its members with per-head logits
    ``W . LeakyReLU(W_in h_i + W_out h_j)`` and adds ``sum_j alpha_ij W_out h_j``.
    A member's only neighbour inside a star is the fact node (weight 1); a
    member shared by several stars adds the mean of those messages.
    ``center`` must be sorted.
    """
    H = ops.as_tensor(H)
    n, d = H.shape
    if len(center) == 0:
        return (H, np.zeros((0, heads))) if return_attention else H
    dh = d // heads
    k = len(center)
    A = ops.matmul(H, W_in)
    B = ops.matmul(H, W_out)
    B_member = ops.take_rows(B, member)
    z = ops.leaky_relu(ops.add(ops.take_rows(A, center), B_member), slope)
    logits = ops.sum(ops.mul(ops.reshape(z, (k, heads, dh)), ops.reshape(W, (heads, dh))), axis=2)
    alpha = ops.segment_softmax(logits, center, n)
    msg = ops.mul(ops.reshape(B_member, (k, heads, dh)), ops.reshape(alpha, (k, heads, 1)))
    to_center = ops.segment_sum(ops.reshape(msg, (k, d)), center, n)
    counts = np.bincount(member, minlength=n).astype(np.float64)
    to_member = ops.segment_sum(ops.take_rows(B, center), member, n, weights=1.0 / counts[member])
    out = ops.add(H, ops.add(to_center, to_member))
    return (out, alpha.data) if return_attention else out


def relation_gates(omegas: list, force_one: bool = False, drop_nested: bool = False) -> Tensor:
    """``sigmoid(omega_tau)`` for connected, atomic, nested edges."""
    if force_one:
        return Tensor(np.ones(N_TYPES))
    parts = [ops.sigmoid(w) for w in omegas]
    if drop_nested:
        parts[2] = Tensor(np.zeros(1))
    return ops.concat(parts, axis=0)


def inter_fact_pass(H, E, W_forward, W_reverse, W_self, W_rel, gates, src: np.ndarray, rel: np.ndarray,
                    dst: np.ndarray, tau: np.ndarray, lam: np.ndarray, weights: np.ndarray | None = None,
                    activation: str = "tanh"):
    """``h_i <- act(sum_(r,j) g_tau(r) W_lam(r) phi(h_j, e_r) + W_self h_i)``, ``e_r <- e_r W_rel``.

    ``phi(h, e) = circ_corr(h, e)``.  Messages flow
    ``src -> dst``; ``lam`` selects ``W_forward`` (0) or ``W_reverse`` (1).
    """
    H, E = ops.as_tensor(H), ops.as_tensor(E)
    n, d = H.shape
    group = np.asarray(tau, np.int64) * 2 + np.asarray(lam, np.int64)
    agg = correlation_aggregate(H, E, src, rel, dst, n, weights=weights, groups=group, n_groups=2 * N_TYPES)
    mixed = ops.matmul(ops.reshape(gates, (1, N_TYPES)), ops.reshape(agg, (N_TYPES, 2 * n * d)))
    mixed = ops.reshape(mixed, (2, n, d))
    W_dir = ops.stack([W_forward, W_reverse], axis=0)
    out = ops.sum(ops.matmul(mixed, W_dir), axis=0)
    H_new = _ACTIVATIONS[activation](ops.add(out, ops.matmul(H, W_self)))
    return H_new, ops.matmul(E, W_rel)


def edge_norm(src: np.ndarray, dst: np.ndarray, n_nodes: int, mode: str) -> np.ndarray | None:
    """Per-edge aggregation weights from full-graph degrees (``None`` for a plain sum)."""
    if mode == "sum":
        return None
    deg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
    if mode == "mean":
        return 1.0 / deg[dst]
    out_deg = np.bincount(src, minlength=n_nodes).astype(np.float64)
    return 1.0 / np.sqrt(deg[dst] * out_deg[src])


# ----------------------------------------------------------------------
# full encoder


def initial_nodes(g: EncoderGraph, params: ParamStore, cfg: EncoderConfig,
                  time_range: tuple[float, float] | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """``(H0, H_r, H_f)`` with rows ordered as in ``g``."""
    d = cfg.d
    H_ent = params["H_a"]
    E = params["E"]
    H_r = init_relation_nodes(ops.take_rows(E, g.rel_refs), params["W_r"])
    if g.n_times:
        lo, hi = time_range if time_range is not None else (None, None)
        tau = normalise_times(g.time_values, lo, hi)
        H_t = time2vec(tau, params["t2v.omega"], params["t2v.w_p"], params["t2v.b_p"],
                       params["t2v.w_np"], params["t2v.b_np"])
    else:
        H_t = Tensor(np.zeros((0, d)))
    atomic = ops.concat([H_ent, H_t, H_r], axis=0)
    if g.n_facts == 0:
        H_f = Tensor(np.zeros((0, d)))
    elif "factinit" in cfg.ablate:
        H_f = ops.take_rows(params["H_f"], g.fact_ids)
    else:
        H_f = init_fact_nodes(ops.take_rows(atomic, g.fact_head), ops.take_rows(atomic, g.fact_rel),
                              ops.take_rows(atomic, g.fact_tail), params["f_m.W"], params["f_m.b"],
                              cfg.fact_init)
    return ops.concat([atomic, H_f], axis=0), H_r, H_f


def encode(g: EncoderGraph, params: ParamStore, cfg: EncoderConfig, mode: str = "eval",
           rng: np.random.Generator | None = None, sampled: SampledEdges | None = None,
           time_range: tuple[float, float] | None = None, keep_attention: bool = False) -> EncoderState:
    """Run ``cfg.layers`` rounds of intra-fact then inter-fact passing.

    ``mode="train"`` enables dropout (``rng`` required) and uses ``sampled``
    edges when given; ``mode="eval"`` always uses the full adjacency.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    H0, H_r, H_f = initial_nodes(g, params, cfg, time_range)
    H, E = H0, params["E"]
    e = g.edges
    norm = edge_norm(e.src, e.dst, g.n_nodes, cfg.inter_norm)
    if training and sampled is not None:
        idx, w = sampled.index, sampled.weight
        src, dst, rel, tau, lam = e.src[idx], e.dst[idx], e.rel[idx], e.tau[idx], e.lam[idx]
        if norm is not None:
            w = norm[idx] if w is None else w * norm[idx]
    else:
        src, dst, rel, tau, lam, w = e.src, e.dst, e.rel, e.tau, e.lam, norm
    state = EncoderState(H=H, E=E, H_r=H_r, H_f=H_f, H0=H0)
    for l in range(cfg.layers):
        if "intra" not in cfg.ablate:
            res = intra_fact_pass(H, params[f"intra{l}.W_in"], params[f"intra{l}.W_out"], params[f"intra{l}.W"],
                                  g.star_center, g.star_member, cfg.intra_heads, cfg.leaky_slope,
                                  return_attention=keep_attention)
            if keep_attention:
                H, att = res
                state.attention.append(att)
            else:
                H = res
            H = ops.dropout(H, cfg.intra_dropout, rng, training)
        if "inter" not in cfg.ablate:
            gates = relation_gates([params[f"inter{l}.omega_{n}"] for n in TYPE_NAMES],
                                   force_one="gate" in cfg.ablate, drop_nested=cfg.nested_gate_drop)
            W_fwd = params[f"inter{l}.W_forward"]
            W_rev = W_fwd if "direction" in cfg.ablate else params[f"inter{l}.W_reverse"]
            H, E = inter_fact_pass(H, E, W_fwd, W_rev, params[f"inter{l}.W_self"], params[f"inter{l}.W_rel"],
                                   gates, src, rel, dst, tau, lam, w, cfg.inter_activation)
            H = ops.dropout(H, cfg.inter_dropout, rng, training)
        state.layers.append((H, E))
    state.H, state.E = H, E
    return state
