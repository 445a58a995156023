"""Encoder view of a lifted graph and neighbour sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hidr import EdgeArrays, EdgeType, HAS_HEAD, HAS_RELATION, HAS_TAIL, HidrGraph

TRAIN_SPLITS = ("train", "extra")


@dataclass
class EncoderGraph:
    """Row-indexed view of the part of a :class:`HidrGraph` visible to the encoder.

    Row order: entities, timestamps, relation nodes, kept fact nodes.
    """
    hidr: HidrGraph
    n_entities: int
    n_times: int
    rel_refs: np.ndarray        # dataset relation id of each relation node
    fact_ids: np.ndarray        # HiDR fact index of each kept fact node
    fact_head: np.ndarray       # rows of head / relation node / tail per kept fact node
    fact_rel: np.ndarray
    fact_tail: np.ndarray
    star_center: np.ndarray     # one entry per (fact node, member) pair, sorted by center
    star_member: np.ndarray
    edges: EdgeArrays
    time_values: np.ndarray     # raw timestamp values in vocabulary order
    n_relation_rows: int

    @property
    def n_relation_nodes(self) -> int:
        return len(self.rel_refs)

    @property
    def n_facts(self) -> int:
        return len(self.fact_ids)

    @property
    def relation_offset(self) -> int:
        return self.n_entities + self.n_times

    @property
    def fact_offset(self) -> int:
        return self.relation_offset + self.n_relation_nodes

    @property
    def n_nodes(self) -> int:
        return self.fact_offset + self.n_facts

    def fact_row(self, fact_index: int) -> int:
        """Row of HiDR fact node ``fact_index``; raises if it is not part of the view."""
        row = self._fact_row.get(int(fact_index))
        if row is None:
            raise KeyError(f"fact node F#{fact_index} is not visible to the encoder")
        return row

    def has_fact(self, fact_index: int) -> bool:
        return int(fact_index) in self._fact_row

    def __post_init__(self) -> None:
        self._fact_row = {int(k): self.fact_offset + i for i, k in enumerate(self.fact_ids)}


def build_view(g: HidrGraph, splits: tuple[str, ...] = TRAIN_SPLITS) -> EncoderGraph:
    """Encoder view over the triples of ``splits``.

    Fact nodes are kept when their source fact belongs to ``splits`` or when
    some nested triple refers to them (they are the candidates of triple
    prediction).  Nested triples are kept only for ``splits``.
    """
    referenced = set()
    for t in g.triples:
        if t.part == "n":
            referenced.add(t.src - g.fact_offset)
            referenced.add(t.dst - g.fact_offset)
    keep = np.array([k for k in range(g.n_fact_nodes) if g.fact_split[k] in splits or k in referenced],
                    dtype=np.int64)
    # HiDR node index -> view row; atomic and relation nodes keep their index
    remap = np.full(g.n_nodes, -1, dtype=np.int64)
    remap[:g.fact_offset] = np.arange(g.fact_offset)
    remap[g.fact_offset + keep] = g.fact_offset + np.arange(len(keep))

    head = np.zeros(len(keep), np.int64)
    rel = np.zeros(len(keep), np.int64)
    tail = np.zeros(len(keep), np.int64)
    centers, members, kept = [], [], []
    for t in g.triples:
        if t.part == "a":
            if t.split in splits:
                kept.append(t)
            continue
        if remap[t.src] < 0 or (t.part == "n" and (t.split not in splits or remap[t.dst] < 0)):
            continue
        kept.append(t)
        if t.part == "c":
            row = remap[t.src]
            centers.append(row)
            members.append(t.dst)
            if t.edge.type == EdgeType.CONNECTED:
                k = row - g.fact_offset
                if t.edge.ref == HAS_HEAD:
                    head[k] = t.dst
                elif t.edge.ref == HAS_TAIL:
                    tail[k] = t.dst
                elif t.edge.ref == HAS_RELATION:
                    rel[k] = t.dst
    arr = g.edge_arrays(kept)
    arr = EdgeArrays(remap[arr.src], remap[arr.dst], arr.rel, arr.tau, arr.lam)
    centers = np.asarray(centers, np.int64)
    members = np.asarray(members, np.int64)
    order = np.argsort(centers, kind="stable")
    return EncoderGraph(
        hidr=g, n_entities=g.n_entities, n_times=g.n_times,
        rel_refs=np.asarray(g.relation_node_refs, np.int64), fact_ids=keep,
        fact_head=head, fact_rel=rel, fact_tail=tail,
        star_center=centers[order], star_member=members[order], edges=arr,
        time_values=np.asarray(list(g.timestamps), dtype=np.float64),
        n_relation_rows=g.n_relation_rows)


@dataclass
class SampledEdges:
    index: np.ndarray    # kept positions into the full edge arrays
    weight: np.ndarray   # in-degree / kept count of the receiving node


def sample_neighbors(edges: EdgeArrays, n_nodes: int, cap: int | None,
                     rng: np.random.Generator | None) -> SampledEdges:
    """Keep at most ``cap`` incoming messages per receiving node.

    Kept edges of a node with in-degree ``deg > cap`` are a uniform random
    subset and carry weight ``deg / cap`` so the sampled sum is an unbiased
    estimate of the full one.  ``cap=None`` keeps everything.
    """
    m = len(edges)
    if cap is None or m == 0:
        return SampledEdges(np.arange(m), np.ones(m))
    if cap < 1:
        raise ValueError(f"neighbour cap must be >= 1, got {cap}")
    deg = np.bincount(edges.dst, minlength=n_nodes)
    if deg.max(initial=0) <= cap:
        return SampledEdges(np.arange(m), np.ones(m))
    if rng is None:
        raise ValueError("sampling needs a generator")
    key = rng.random(m)
    order = np.lexsort((key, edges.dst))
    dst_sorted = edges.dst[order]
    starts = np.searchsorted(dst_sorted, dst_sorted, side="left")
    pos = np.arange(m) - starts
    keep = np.sort(order[pos < cap])
    kept_deg = np.minimum(deg, cap)
    w = deg[edges.dst[keep]] / kept_deg[edges.dst[keep]]
    return SampledEdges(keep, w.astype(np.float64))
