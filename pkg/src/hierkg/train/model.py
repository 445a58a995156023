"""Encoder, decoder and parameters bundled for one lifted dataset."""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..decoder.conve import conve_features, register_conve_params
from ..decoder.sequence import Query, TokenTable, serialize
from ..decoder.transformer import DecoderConfig, register_transformer_params, score_candidates, transformer_decode
from ..hidr import HAS_HEAD, HAS_TAIL, HidrGraph, lift
from ..hisl.encoder import EncoderConfig, EncoderState, encode, register_encoder_params
from ..hisl.graph import SampledEdges, build_view
from ..kg.model import SourceDataset
from ..numeric import CheckpointError, ParamStore, Tensor, no_grad, ops, read_checkpoint, smoothed_cross_entropy


def group_queries(queries: list[Query]) -> "OrderedDict[tuple[int, str], list[int]]":
    """Query positions grouped by ``(length, space)`` in first-seen order."""
    groups: OrderedDict[tuple[int, str], list[int]] = OrderedDict()
    for i, q in enumerate(queries):
        groups.setdefault((len(q), q.space), []).append(i)
    return groups


class Model:
    """Parameters plus the encoder view of one lifted graph.

    The lifted graph is shared, not copied: several tasks trained on the
    same model see the very same :class:`HidrGraph` object.
    """

    def __init__(self, ds: SourceDataset, enc: EncoderConfig, dec: DecoderConfig,
                 graph: HidrGraph | None = None, fact_nodes: str = "auto", seed: int = 0) -> None:
        self.ds = ds
        self.enc = enc
        self.dec = dec
        self.fact_nodes = fact_nodes
        self.graph = graph if graph is not None else lift(ds, fact_nodes)
        self.view = build_view(self.graph)
        self.table = TokenTable(self.view)
        tv = self.view.time_values
        self.time_range = (float(tv.min()), float(tv.max())) if tv.size else (0.0, 0.0)
        self.seed = seed
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        register_encoder_params(self.params, enc, self.view.n_entities, self.view.n_relation_rows, rng,
                                n_fact_rows=self.graph.n_fact_nodes)
        if dec.kind == "transformer":
            register_transformer_params(self.params, dec, enc.d, rng)
        else:
            if dec.kind == "conve-sf" and "factinit" in enc.ablate:
                raise ValueError("the s_f scorer needs the fact-node MLP, which the factinit ablation removes")
            register_conve_params(self.params, enc.d, dec.conve_channels, dec.conve_kernel, rng)

    # -- encoder -----------------------------------------------------
    def encode(self, mode: str = "eval", rng: np.random.Generator | None = None,
               sampled: SampledEdges | None = None) -> EncoderState:
        return encode(self.view, self.params, self.enc, mode, rng, sampled, self.time_range)

    # -- decoders ----------------------------------------------------
    def _transformer_logits(self, qs: list[Query], space: str, state: EncoderState,
                            training: bool, rng) -> Tensor:
        X, mask_pos = serialize(qs, self.table, state.H, state.E, self.params["dec.M"])
        h = transformer_decode(X, mask_pos, self.params, self.dec, rng, training)
        C = self.table.candidates(space, state.H, state.E)
        return score_candidates(h, C, self.params["dec.f.W"], self.params["dec.f.b"])

    def _rows(self, state: EncoderState, tokens: list) -> Tensor:
        both = ops.concat([state.H, state.E], axis=0)
        return ops.take_rows(both, np.array([self.table.row(t) for t in tokens], dtype=np.int64))

    def _conve(self, x_a, x_b) -> Tensor:
        p = self.params
        return conve_features(x_a, x_b, p["conve.psi"], p["conve.W"], p["conve.b"], self.dec.conve_activation)

    def _conve_sh(self, qs: list[Query], space: str, state: EncoderState) -> Tensor:
        """``score(h, r, t) = conve(h, r) . t`` for every candidate in the masked slot."""
        C = self.table.candidates(space, state.H, state.E)
        n, d = C.shape
        if all(q.mask == 2 for q in qs):
            feat = self._conve(self._rows(state, [q.tokens[0] for q in qs]),
                               self._rows(state, [q.tokens[1] for q in qs]))
            return ops.matmul(feat, ops.transpose(C))
        if not all(q.mask == 0 for q in qs):
            raise ValueError("ConvE scoring expects head or tail queries")
        rel_tokens = sorted({q.tokens[1] for q in qs})
        slot = {t: i for i, t in enumerate(rel_tokens)}
        R = self._rows(state, rel_tokens)
        cand = ops.take_rows(C, np.tile(np.arange(n), len(rel_tokens)))
        rel = ops.take_rows(R, np.repeat(np.arange(len(rel_tokens)), n))
        F = ops.reshape(self._conve(cand, rel), (len(rel_tokens), n, d))
        per_query = ops.take_rows(F, np.array([slot[q.tokens[1]] for q in qs]))
        tails = ops.reshape(self._rows(state, [q.tokens[2] for q in qs]), (len(qs), 1, d))
        return ops.sum(ops.mul(per_query, tails), axis=2)

    def _conve_sf(self, qs: list[Query], space: str, state: EncoderState, chunk: int = 8) -> Tensor:
        """``log p(h | f, has_head) + log p(t | f, has_tail)`` with ``f = f_m([h; e_r W_r; t])``."""
        if space != "entities" or any(q.mask not in (0, 2) for q in qs):
            raise ValueError("the s_f scorer ranks head or tail entities only")
        g = self.graph
        C = self.table.candidates("entities", state.H, state.E)
        n, d = C.shape
        W = self.params["f_m.W"]
        W1, W2, W3 = (ops.index(W, slice(i * d, (i + 1) * d)) for i in range(3))
        b = self.params["f_m.b"]
        e_head = ops.index(state.E, slice(g.connected_offset + HAS_HEAD, g.connected_offset + HAS_HEAD + 1))
        e_tail = ops.index(state.E, slice(g.connected_offset + HAS_TAIL, g.connected_offset + HAS_TAIL + 1))
        CW1, CW3 = ops.matmul(C, W1), ops.matmul(C, W3)
        out = []
        for s in range(0, len(qs), chunk):
            part = qs[s:s + chunk]
            B = len(part)
            rel = ops.matmul(ops.matmul(self._rows(state, [q.tokens[1] for q in part]), self.params["W_r"]), W2)
            heads_known = all(q.mask == 2 for q in part)
            if heads_known:
                known = ops.matmul(self._rows(state, [q.tokens[0] for q in part]), W1)
                cand_part = CW3
                known_id = np.array([q.tokens[0][1] for q in part])
            else:
                known = ops.matmul(self._rows(state, [q.tokens[2] for q in part]), W3)
                cand_part = CW1
                known_id = np.array([q.tokens[2][1] for q in part])
            base = ops.reshape(ops.add(ops.add(known, rel), b), (B, 1, d))
            f = ops.reshape(ops.add(base, ops.reshape(cand_part, (1, n, d))), (B * n, d))
            lp_h = ops.log_softmax(ops.matmul(self._conve(f, ops.matmul(Tensor(np.ones((B * n, 1))), e_head)),
                                              ops.transpose(C)), axis=1)
            lp_t = ops.log_softmax(ops.matmul(self._conve(f, ops.matmul(Tensor(np.ones((B * n, 1))), e_tail)),
                                              ops.transpose(C)), axis=1)
            rows = np.arange(B * n)
            cand_ids = np.tile(np.arange(n), B)
            fixed_ids = np.repeat(known_id, n)
            h_ids, t_ids = (fixed_ids, cand_ids) if heads_known else (cand_ids, fixed_ids)
            score = ops.add(ops.index(lp_h, (rows, h_ids)), ops.index(lp_t, (rows, t_ids)))
            out.append(ops.reshape(score, (B, n)))
        return ops.concat(out, axis=0)

    def logits(self, qs: list[Query], space: str, state: EncoderState, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """Logits of equal-length queries sharing one candidate space."""
        if self.dec.kind == "transformer":
            return self._transformer_logits(qs, space, state, training, rng)
        main = [Query(q.tokens[:3], q.mask, q.space, q.category) for q in qs]
        if self.dec.kind == "conve-sh":
            return self._conve_sh(main, space, state)
        return self._conve_sf(main, space, state)

    def _grouped(self, queries: list[Query]) -> "OrderedDict":
        if self.dec.kind == "transformer":
            return group_queries(queries)
        groups: OrderedDict = OrderedDict()
        for i, q in enumerate(queries):
            if q.mask not in (0, 2):
                raise ValueError("ConvE decoders only answer head and tail queries (use mask_roles='so')")
            groups.setdefault((q.mask, q.space), []).append(i)
        return groups

    def loss(self, queries: list[Query], state: EncoderState, entity_smoothing: float = 0.0,
             relation_smoothing: float = 0.0, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        """Mean smoothed cross-entropy over ``queries``."""
        if not queries:
            raise ValueError("no queries")
        total = None
        for (_, space), idx in self._grouped(queries).items():
            qs = [queries[i] for i in idx]
            z = self.logits(qs, space, state, training, rng)
            gold = np.array([self.table.gold_index(q) for q in qs], dtype=np.int64)
            eps = relation_smoothing if space == "relations" else entity_smoothing
            part = smoothed_cross_entropy(z, gold, eps, reduction="sum")
            total = part if total is None else ops.add(total, part)
        return ops.scale(total, 1.0 / len(queries))

    def score(self, queries: list[Query], state: EncoderState, chunk: int = 512) -> list[np.ndarray]:
        """Numpy score vectors over each query's candidate space (no gradients)."""
        out: list[np.ndarray | None] = [None] * len(queries)
        with no_grad():
            for (_, space), idx in self._grouped(queries).items():
                for s in range(0, len(idx), chunk):
                    part = idx[s:s + chunk]
                    z = self.logits([queries[i] for i in part], space, state).data
                    for j, i in enumerate(part):
                        out[i] = z[j]
        return out

    # -- checkpoints -------------------------------------------------
    def meta(self) -> dict:
        return {"encoder": self.enc.to_dict(), "decoder": self.dec.to_dict(), "time_range": list(self.time_range),
                "fact_nodes": self.fact_nodes, "n_entities": self.view.n_entities,
                "n_relation_rows": self.view.n_relation_rows}

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = self.meta()
        if extra:
            meta.update(extra)
        self.params.save(path, meta)

    def load(self, path: str | Path) -> dict:
        state, meta = read_checkpoint(path)
        for key in ("encoder", "decoder", "fact_nodes"):
            mine = self.meta()[key]
            theirs = meta.get(key)
            if key in ("encoder",):
                # gate handling and sampling may differ between training stages
                mine = {k: v for k, v in mine.items() if k not in ("nested_gate_drop", "neighbor_cap", "seed")}
                theirs = {k: v for k, v in (theirs or {}).items() if k in mine}
            if theirs != mine:
                raise CheckpointError(f"checkpoint {key} settings {theirs} do not match the model's {mine}")
        self.params.load_state(state)
        return meta


def entity_rows(model: Model) -> np.ndarray:
    """Copy of the atomic entity table ``H_a``."""
    return model.params["H_a"].data.copy()


__all__ = ["Model", "entity_rows", "group_queries"]
