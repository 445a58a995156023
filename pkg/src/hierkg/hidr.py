"""Lifting of every dataset flavor into one typed triple graph, and back.

Node table order is fixed: entities, timestamp nodes, relation nodes,
fact nodes.  Relation rows (the ``E`` table of the encoder) are laid out as
dataset relations, ``begin``, ``end``, nested relations, then the three
connected relations.

Each source fact contributes exactly one atomic triple to ``F_a`` (in
source order, extra training triples last).  Facts that carry qualifiers or
an interval, facts referenced by a nested fact, and every fact when
``fact_nodes="all"``, additionally get a fact node with its connected
triples in ``F_c``.  ``fact_origin[k]`` is the ``F_a`` position of fact
node ``k``.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .kg.model import Fact, Flavor, NestedFact, SourceDataset, Split, Vocab


class NodeKind(enum.IntEnum):
    ATOMIC = 0
    RELATION = 1
    FACT = 2


class EdgeType(enum.IntEnum):
    CONNECTED = 0
    ATOMIC = 1
    NESTED = 2
    QUALIFIER = 3


class RelClass(enum.IntEnum):
    """Edge type used by the inter-fact gate."""
    CONNECTED = 0
    ATOMIC = 1
    NESTED = 2


class Direction(enum.IntEnum):
    FORWARD = 0
    REVERSE = 1


HAS_RELATION, HAS_HEAD, HAS_TAIL = 0, 1, 2
CONNECTED_NAMES = ("has_relation", "has_head_entity", "has_tail_entity")


class HidrError(ValueError):
    pass


@dataclass(frozen=True)
class NodeId:
    kind: NodeKind
    ref: int
    numeric: int | None = None

    @property
    def is_timestamp(self) -> bool:
        return self.numeric is not None


@dataclass(frozen=True)
class EdgeKind:
    """Edge label; ``ref`` is the connected variant, relation id or nested relation id.

    Qualifier refs use the extended atomic relation space: dataset relations
    followed by ``begin`` (``n_relations``) and ``end`` (``n_relations + 1``).
    """
    type: EdgeType
    ref: int


class HidrTriple(NamedTuple):
    src: int
    edge: EdgeKind
    dst: int
    part: str   # "a", "c" or "n"
    split: str  # "train", "valid", "test" or "extra"


def edge_class(e: EdgeKind, direction: Direction | int = Direction.FORWARD) -> tuple[RelClass, Direction]:
    direction = Direction(direction)
    if e.type == EdgeType.CONNECTED:
        return RelClass.CONNECTED, direction
    if e.type == EdgeType.NESTED:
        return RelClass.NESTED, direction
    # qualifier keys live in the atomic relation vocabulary
    return RelClass.ATOMIC, direction


CONNECTED_EDGES = tuple(EdgeKind(EdgeType.CONNECTED, i) for i in range(3))


@dataclass
class EdgeArrays:
    """Flat edge list with reverse twins; messages flow ``src -> dst``."""
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray    # row of the relation table
    tau: np.ndarray    # RelClass
    lam: np.ndarray    # Direction

    def __len__(self) -> int:
        return len(self.src)


class HidrGraph:
    """Typed multigraph of atomic, relation and fact nodes.

    Built by :func:`lift`; treat as immutable afterwards.
    """

    def __init__(self, flavor: Flavor, entities: Vocab, relations: Vocab, nested_relations: Vocab,
                 timestamps: Vocab, relation_node_refs: list[int], n_fact_nodes: int,
                 triples: list[HidrTriple], fact_origin: list[int], fact_split: list[str]) -> None:
        self.flavor = flavor
        self.entities = entities
        self.relations = relations
        self.nested_relations = nested_relations
        self.timestamps = timestamps
        self.relation_node_refs = list(relation_node_refs)
        self.triples = triples
        self.fact_origin = list(fact_origin)
        self.fact_split = list(fact_split)
        self.n_entities = len(entities)
        self.n_times = len(timestamps)
        self.n_relation_nodes = len(relation_node_refs)
        self.n_fact_nodes = n_fact_nodes
        self.time_offset = self.n_entities
        self.relation_offset = self.n_entities + self.n_times
        self.fact_offset = self.relation_offset + self.n_relation_nodes
        self.n_relations = len(relations)
        # begin/end qualifier ids follow the dataset relations
        self.begin_rel = self.n_relations
        self.end_rel = self.n_relations + 1
        self._relnode_of = {r: self.relation_offset + i for i, r in enumerate(relation_node_refs)}
        self._adj: tuple[list, list] | None = None

    # -- node table --------------------------------------------------
    @property
    def n_atomic(self) -> int:
        return self.n_entities + self.n_times

    @property
    def n_nodes(self) -> int:
        return self.fact_offset + self.n_fact_nodes

    def node(self, i: int) -> NodeId:
        if i < 0 or i >= self.n_nodes:
            raise IndexError(i)
        if i < self.n_entities:
            return NodeId(NodeKind.ATOMIC, i)
        if i < self.relation_offset:
            k = i - self.time_offset
            return NodeId(NodeKind.ATOMIC, k, self.timestamps.label(k))
        if i < self.fact_offset:
            return NodeId(NodeKind.RELATION, self.relation_node_refs[i - self.relation_offset])
        return NodeId(NodeKind.FACT, i - self.fact_offset)

    @property
    def nodes(self) -> list[NodeId]:
        return [self.node(i) for i in range(self.n_nodes)]

    def entity_node(self, e: int) -> int:
        return e

    def time_node(self, value: int) -> int:
        return self.time_offset + self.timestamps.index(value)

    def relation_node(self, r: int) -> int:
        return self._relnode_of[r]

    def fact_node(self, k: int) -> int:
        return self.fact_offset + k

    # -- relation rows -----------------------------------------------
    @property
    def n_atomic_relations(self) -> int:
        """Dataset relations plus ``begin`` and ``end``."""
        return self.n_relations + 2

    @property
    def nested_offset(self) -> int:
        return self.n_atomic_relations

    @property
    def connected_offset(self) -> int:
        return self.nested_offset + len(self.nested_relations)

    @property
    def n_relation_rows(self) -> int:
        return self.connected_offset + 3

    def relation_row(self, e: EdgeKind) -> int:
        if e.type == EdgeType.CONNECTED:
            return self.connected_offset + e.ref
        if e.type == EdgeType.NESTED:
            return self.nested_offset + e.ref
        return e.ref

    def relation_row_labels(self) -> list[str]:
        return ([str(r) for r in self.relations] + ["begin", "end"]
                + [str(r) for r in self.nested_relations] + list(CONNECTED_NAMES))

    # -- partitions --------------------------------------------------
    def partition(self, part: str) -> list[HidrTriple]:
        return [t for t in self.triples if t.part == part]

    @property
    def atomic_triples(self) -> list[HidrTriple]:
        return self.partition("a")

    @property
    def connected_triples(self) -> list[HidrTriple]:
        return self.partition("c")

    @property
    def nested_triples(self) -> list[HidrTriple]:
        return self.partition("n")

    def fact_members(self) -> dict[int, list[HidrTriple]]:
        """Connected triples grouped by fact node (global node index), in triple order."""
        out: dict[int, list[HidrTriple]] = {}
        for t in self.triples:
            if t.part == "c":
                out.setdefault(t.src, []).append(t)
        return out

    # -- adjacency ---------------------------------------------------
    def adjacency(self) -> tuple[list[list[tuple[int, EdgeKind, int]]], list[list[tuple[int, EdgeKind, int]]]]:
        """Per-node ``(outgoing, incoming)`` lists of ``(triple index, edge, other node)``."""
        if self._adj is None:
            out = [[] for _ in range(self.n_nodes)]
            inc = [[] for _ in range(self.n_nodes)]
            for i, t in enumerate(self.triples):
                out[t.src].append((i, t.edge, t.dst))
                inc[t.dst].append((i, t.edge, t.src))
            self._adj = (out, inc)
        return self._adj

    def edge_arrays(self, triples: list[HidrTriple] | None = None) -> EdgeArrays:
        """Forward edges followed by their reverse twins."""
        ts = self.triples if triples is None else triples
        n = len(ts)
        src = np.fromiter((t.src for t in ts), dtype=np.int64, count=n)
        dst = np.fromiter((t.dst for t in ts), dtype=np.int64, count=n)
        rel = np.fromiter((self.relation_row(t.edge) for t in ts), dtype=np.int64, count=n)
        tau = np.fromiter((edge_class(t.edge)[0] for t in ts), dtype=np.int64, count=n)
        return EdgeArrays(
            src=np.concatenate([src, dst]), dst=np.concatenate([dst, src]),
            rel=np.concatenate([rel, rel]), tau=np.concatenate([tau, tau]),
            lam=np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)]))


# ----------------------------------------------------------------------
# lift / lower


def _needs_fact_node(flavor: Flavor, f: Fact) -> bool:
    return flavor in (Flavor.HKG, Flavor.TKG, Flavor.HTKG) or bool(f.qualifiers) or f.is_temporal


def lift(ds: SourceDataset, fact_nodes: str = "auto") -> HidrGraph:
    """Lift ``ds`` into a :class:`HidrGraph`.

    ``fact_nodes="all"`` gives every split fact a fact node (used by joint
    training on nested data); ``"auto"`` only creates the ones the flavor
    requires.  Extra training triples never get fact nodes.
    """
    if fact_nodes not in ("auto", "all"):
        raise ValueError(f"fact_nodes must be 'auto' or 'all', got {fact_nodes!r}")
    sources: list[tuple[Fact, str]] = [(f, name) for name, s in ds.splits() for f in s.facts]
    sources += [(f, "extra") for f in ds.extra_train]
    nested: list[tuple[NestedFact, str]] = [(nf, name) for name, s in ds.splits() for nf in s.nested]

    # first atomic position per main triple, for nested references
    first_pos: dict[tuple[int, int, int], int] = {}
    for i, (f, split) in enumerate(sources):
        if split != "extra":
            first_pos.setdefault(f.main, i)
    referenced: set[int] = set()
    for nf, _ in nested:
        for part in (nf.subject, nf.object):
            pos = first_pos.get(part)
            if pos is None:
                raise HidrError(f"nested fact {nf} refers to a triple absent from the atomic facts")
            referenced.add(pos)

    owner: list[int] = []   # F_a position of each fact node
    node_of_pos: dict[int, int] = {}
    for i, (f, split) in enumerate(sources):
        if split == "extra":
            continue
        if fact_nodes == "all" or i in referenced or _needs_fact_node(ds.flavor, f):
            node_of_pos[i] = len(owner)
            owner.append(i)

    rel_refs = sorted({sources[i][0].relation for i in owner})
    n_e, n_t = len(ds.entities), len(ds.timestamps)
    rel_off = n_e + n_t
    relnode = {r: rel_off + k for k, r in enumerate(rel_refs)}
    fact_off = rel_off + len(rel_refs)
    time_node = {v: n_e + k for k, v in enumerate(ds.timestamps)}
    n_rel = len(ds.relations)
    rel_begin = EdgeKind(EdgeType.QUALIFIER, n_rel)
    rel_end = EdgeKind(EdgeType.QUALIFIER, n_rel + 1)

    triples: list[HidrTriple] = []
    for i, (f, split) in enumerate(sources):
        triples.append(HidrTriple(f.head, EdgeKind(EdgeType.ATOMIC, f.relation), f.tail, "a", split))
    fact_split = []
    for k, i in enumerate(owner):
        f, split = sources[i]
        fn = fact_off + k
        fact_split.append(split)
        triples.append(HidrTriple(fn, CONNECTED_EDGES[HAS_RELATION], relnode[f.relation], "c", split))
        triples.append(HidrTriple(fn, CONNECTED_EDGES[HAS_HEAD], f.head, "c", split))
        triples.append(HidrTriple(fn, CONNECTED_EDGES[HAS_TAIL], f.tail, "c", split))
        for key, value in f.qualifiers:
            triples.append(HidrTriple(fn, EdgeKind(EdgeType.QUALIFIER, key), value, "c", split))
        if f.is_temporal:
            triples.append(HidrTriple(fn, rel_begin, time_node[f.begin], "c", split))
            triples.append(HidrTriple(fn, rel_end, time_node[f.end], "c", split))
    for nf, split in nested:
        s = fact_off + node_of_pos[first_pos[nf.subject]]
        o = fact_off + node_of_pos[first_pos[nf.object]]
        triples.append(HidrTriple(s, EdgeKind(EdgeType.NESTED, nf.relation), o, "n", split))
    return HidrGraph(ds.flavor, ds.entities, ds.relations, ds.nested_relations, ds.timestamps,
                     rel_refs, len(owner), triples, owner, fact_split)


def _fact_from_members(g: HidrGraph, fn: int, members: list[HidrTriple]) -> Fact:
    slots: dict[int, int] = {}
    quals: list[tuple[int, int]] = []
    begin = end = None
    for t in members:
        e = t.edge
        if e.type == EdgeType.CONNECTED:
            if e.ref in slots:
                raise HidrError(f"fact node F#{fn - g.fact_offset} has two {CONNECTED_NAMES[e.ref]} edges")
            slots[e.ref] = t.dst
        elif e.ref == g.begin_rel:
            begin = g.timestamps.label(t.dst - g.time_offset)
        elif e.ref == g.end_rel:
            end = g.timestamps.label(t.dst - g.time_offset)
        else:
            quals.append((e.ref, t.dst))
    missing = [CONNECTED_NAMES[v] for v in range(3) if v not in slots]
    if missing:
        raise HidrError(f"fact node F#{fn - g.fact_offset} lacks {', '.join(missing)}")
    k = slots[HAS_RELATION] - g.relation_offset
    if not 0 <= k < g.n_relation_nodes:
        raise HidrError(f"fact node F#{fn - g.fact_offset}: has_relation does not point at a relation node")
    return Fact(slots[HAS_HEAD], g.relation_node_refs[k], slots[HAS_TAIL], tuple(quals), begin, end)


def lower(g: HidrGraph) -> SourceDataset:
    """Inverse of :func:`lift`.

    Expects a graph that passes :func:`validate`; missing connected edges
    and dangling nested triples raise :class:`HidrError`.
    """
    members = g.fact_members()
    node_of_pos = {pos: k for k, pos in enumerate(g.fact_origin)}
    facts = {"train": [], "valid": [], "test": [], "extra": []}
    main_of_node: dict[int, tuple[int, int, int]] = {}
    atomic_i = 0
    for t in g.triples:
        if t.part != "a":
            continue
        k = node_of_pos.get(atomic_i)
        if k is None:
            f = Fact(t.src, t.edge.ref, t.dst)
        else:
            fn = g.fact_node(k)
            f = _fact_from_members(g, fn, members.get(fn, []))
            main_of_node[fn] = f.main
        facts[t.split].append(f)
        atomic_i += 1
    nested = {"train": [], "valid": [], "test": []}
    for t in g.triples:
        if t.part == "n":
            if t.src not in main_of_node or t.dst not in main_of_node:
                raise HidrError(f"nested triple {t} is dangling")
            nested[t.split].append(NestedFact(main_of_node[t.src], t.edge.ref, main_of_node[t.dst]))
    sp = {name: Split(tuple(facts[name]), tuple(nested[name])) for name in ("train", "valid", "test")}
    return SourceDataset(g.flavor, sp["train"], sp["valid"], sp["test"], g.entities, g.relations,
                         g.nested_relations, g.timestamps, tuple(facts["extra"]))


# ----------------------------------------------------------------------
# validation


def _fmt(g: HidrGraph, t: HidrTriple) -> str:
    return f"({node_label(g, t.src)}, {edge_label(g, t.edge, t.dst)}, {node_label(g, t.dst)})"


def validate(g: HidrGraph) -> list[str]:
    """Type-membership and completeness violations; empty when the graph is well formed."""
    out: list[str] = []
    n = g.n_nodes
    n_rel, n_nested = g.n_relations, len(g.nested_relations)
    time_rels = (g.begin_rel, g.end_rel)

    def kind(i: int) -> NodeKind | None:
        if not 0 <= i < n:
            return None
        if i < g.relation_offset:
            return NodeKind.ATOMIC
        return NodeKind.RELATION if i < g.fact_offset else NodeKind.FACT

    def is_time(i: int) -> bool:
        return g.time_offset <= i < g.relation_offset

    want_part = {EdgeType.ATOMIC: "a", EdgeType.CONNECTED: "c", EdgeType.QUALIFIER: "c", EdgeType.NESTED: "n"}
    connected: dict[int, Counter] = {g.fact_node(k): Counter() for k in range(g.n_fact_nodes)}
    for t in g.triples:
        ks, kd = kind(t.src), kind(t.dst)
        if ks is None or kd is None:
            out.append(f"dangling node id in {t}")
            continue
        e = t.edge
        if t.part != want_part[e.type]:
            out.append(f"{_fmt(g, t)}: {e.type.name.lower()} edge stored in partition {t.part!r}")
        if e.type == EdgeType.ATOMIC:
            ok = ks == NodeKind.ATOMIC and kd == NodeKind.ATOMIC and 0 <= e.ref < n_rel
            if not ok:
                out.append(f"{_fmt(g, t)}: atomic relation must link two atomic nodes")
        elif e.type == EdgeType.NESTED:
            ok = ks == NodeKind.FACT and kd == NodeKind.FACT and 0 <= e.ref < n_nested
            if not ok:
                out.append(f"{_fmt(g, t)}: nested relation must link two fact nodes")
        elif e.type == EdgeType.CONNECTED:
            if ks != NodeKind.FACT:
                out.append(f"{_fmt(g, t)}: connected edge must start at a fact node")
                continue
            target = NodeKind.RELATION if e.ref == HAS_RELATION else NodeKind.ATOMIC
            if kd != target or (target == NodeKind.ATOMIC and is_time(t.dst)):
                out.append(f"{_fmt(g, t)}: {CONNECTED_NAMES[e.ref]} points at the wrong node type")
            connected[t.src][e.ref] += 1
        else:
            if ks != NodeKind.FACT or kd != NodeKind.ATOMIC:
                out.append(f"{_fmt(g, t)}: qualifier edge must link a fact node to an atomic node")
            elif (e.ref in time_rels) != is_time(t.dst):
                out.append(f"{_fmt(g, t)}: time qualifiers must point at timestamp nodes and only they may")
    for fn, counts in connected.items():
        for v in range(3):
            if counts[v] != 1:
                out.append(f"fact node {node_label(g, fn)} has {counts[v]} {CONNECTED_NAMES[v]} edges")
    n_atomic = sum(1 for t in g.triples if t.part == "a")
    if len(set(g.fact_origin)) != len(g.fact_origin) or any(not 0 <= p < n_atomic for p in g.fact_origin):
        out.append("fact_origin is not injective into the atomic triples")
    return out


# ----------------------------------------------------------------------
# export


def node_label(g: HidrGraph, i: int) -> str:
    if not 0 <= i < g.n_nodes:
        return f"?{i}"
    node = g.node(i)
    if node.kind == NodeKind.FACT:
        return f"F#{node.ref}"
    if node.kind == NodeKind.RELATION:
        return f"R#{g.relations.label(node.ref)}"
    if node.is_timestamp:
        return f"T#{node.numeric}"
    return f"E#{g.entities.label(node.ref)}"


def edge_label(g: HidrGraph, e: EdgeKind, dst: int | None = None) -> str:
    if e.type == EdgeType.CONNECTED:
        return CONNECTED_NAMES[e.ref]
    if e.type == EdgeType.NESTED:
        return f"nested:{g.nested_relations.label(e.ref)}"
    if e.ref == g.begin_rel:
        return "rel:begin"
    if e.ref == g.end_rel:
        return "rel:end"
    return f"rel:{g.relations.label(e.ref)}"


def iter_export(g: HidrGraph) -> Iterator[str]:
    for t in g.triples:
        yield "\t".join([node_label(g, t.src), edge_label(g, t.edge, t.dst), node_label(g, t.dst), t.part, t.split])


def export_tsv(g: HidrGraph, path: str | Path) -> None:
    """Columns: source node, edge, target node, partition (a|c|n), split."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in iter_export(g):
            fh.write(line + "\n")


def connected_counts(g: HidrGraph) -> list[int]:
    """Number of connected-partition triples per fact node."""
    counts = [0] * g.n_fact_nodes
    for t in g.triples:
        if t.part == "c":
            counts[t.src - g.fact_offset] += 1
    return counts
