"""Queries as token sequences, and their embedding lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hidr import HidrGraph
from ..hisl.graph import EncoderGraph
from ..kg.model import Fact
from ..numeric import Tensor, ops

# token kinds
ENT, REL, TIME, FACT = "e", "r", "t", "f"
SPACES = ("entities", "relations", "facts", "all")
SPACE_OF_KIND = {ENT: "entities", REL: "relations", FACT: "facts"}


@dataclass(frozen=True)
class Query:
    """One fact with a single masked slot.

    ``tokens`` are ``(kind, id)`` pairs: entity ids, relation-table rows,
    raw timestamp values or HiDR fact indices.  The token at ``mask`` holds
    the gold filler.  ``space`` names the candidate set and ``category`` the
    report bucket.
    """
    tokens: tuple[tuple[str, int], ...]
    mask: int
    space: str
    category: str = "all"
    key: tuple = ()

    def __post_init__(self) -> None:
        if not 0 <= self.mask < len(self.tokens):
            raise ValueError(f"mask index {self.mask} outside a sequence of length {len(self.tokens)}")
        if self.space not in SPACES:
            raise ValueError(f"unknown candidate space {self.space!r}")
        kind = self.tokens[self.mask][0]
        if self.space != "all" and SPACE_OF_KIND.get(kind) != self.space:
            raise ValueError(f"masked slot of kind {kind!r} is outside candidate space {self.space!r}")
        if self.space == "all" and kind not in (ENT, REL):
            raise ValueError("the joint space covers entities and relations only")

    @property
    def gold_token(self) -> tuple[str, int]:
        return self.tokens[self.mask]

    def __len__(self) -> int:
        return len(self.tokens)


def fact_tokens(f: Fact, g: HidrGraph) -> tuple[tuple[str, int], ...]:
    """``[h, r, t, k1, v1, ..., km, vm]`` followed by ``[begin, tb, end, te]`` for timed facts."""
    out = [(ENT, f.head), (REL, f.relation), (ENT, f.tail)]
    for k, v in f.qualifiers:
        out += [(REL, k), (ENT, v)]
    if f.is_temporal:
        out += [(REL, g.begin_rel), (TIME, f.begin), (REL, g.end_rel), (TIME, f.end)]
    return tuple(out)


def nested_tokens(subject_fact: int, nested_relation: int, object_fact: int,
                  g: HidrGraph) -> tuple[tuple[str, int], ...]:
    return ((FACT, subject_fact), (REL, g.nested_offset + nested_relation), (FACT, object_fact))


class TokenTable:
    """Maps tokens to rows of ``[H; E]`` for one encoder view."""

    def __init__(self, view: EncoderGraph) -> None:
        self.view = view
        g = view.hidr
        self._time_row = {int(v): view.n_entities + i for i, v in enumerate(view.time_values)}
        self.n_nodes = view.n_nodes
        self.n_entities = view.n_entities
        self.n_relations = g.n_relations
        self.fact_rows = view.fact_offset + np.arange(view.n_facts)
        self._fact_pos = {int(k): i for i, k in enumerate(view.fact_ids)}

    def row(self, token: tuple[str, int]) -> int:
        kind, ref = token
        if kind == ENT:
            return ref
        if kind == REL:
            return self.n_nodes + ref
        if kind == TIME:
            return self._time_row[int(ref)]
        if kind == FACT:
            return self.view.fact_row(ref)
        raise ValueError(f"unknown token kind {kind!r}")

    def gold_index(self, q: Query) -> int:
        """Index of the gold filler inside the candidate list of ``q.space``."""
        kind, ref = q.gold_token
        if q.space == "entities":
            return ref
        if q.space == "relations":
            return ref
        if q.space == "facts":
            return self._fact_pos[int(ref)]
        return ref if kind == ENT else self.n_entities + ref

    def candidate_count(self, space: str) -> int:
        return {"entities": self.n_entities, "relations": self.n_relations,
                "facts": len(self.fact_rows), "all": self.n_entities + self.n_relations}[space]

    def candidates(self, space: str, H, E) -> Tensor:
        if space == "entities":
            return ops.index(H, slice(0, self.n_entities))
        if space == "relations":
            return ops.index(E, slice(0, self.n_relations))
        if space == "facts":
            return ops.take_rows(H, self.fact_rows)
        return ops.concat([ops.index(H, slice(0, self.n_entities)), ops.index(E, slice(0, self.n_relations))])


def serialize(queries: list[Query], table: TokenTable, H, E, M) -> tuple[Tensor, np.ndarray]:
    """Embedding sequences (``B x L x d``) with the mask slot replaced by ``M``.

    All queries must have the same length.
    """
    from .transformer import apply_mask

    lengths = {len(q) for q in queries}
    if len(lengths) != 1:
        raise ValueError(f"serialize needs equal-length queries, got lengths {sorted(lengths)}")
    rows = np.array([[table.row(t) for t in q.tokens] for q in queries], dtype=np.int64)
    mask_pos = np.array([q.mask for q in queries], dtype=np.int64)
    rows[np.arange(len(queries)), mask_pos] = 0   # never look the gold up
    both = ops.concat([H, E], axis=0)
    X = ops.take_rows(both, rows)
    return apply_mask(X, mask_pos, M), mask_pos
