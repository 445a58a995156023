"""Canonical in-memory data model for the five knowledge-graph flavors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator


class Flavor(str, enum.Enum):
    TRIPLE = "triple"
    HKG = "hkg"
    TKG = "tkg"
    NKG = "nkg"
    HTKG = "htkg"
    # union of several flavors produced by merge_hybrid
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value: "str | Flavor") -> "Flavor":
        if isinstance(value, Flavor):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown flavor {value!r}; expected one of "
                             f"{', '.join(f.value for f in cls)}") from None

    @property
    def has_qualifiers(self) -> bool:
        return self in (Flavor.HKG, Flavor.HTKG, Flavor.HYBRID)

    @property
    def has_time(self) -> bool:
        return self in (Flavor.TKG, Flavor.HTKG, Flavor.HYBRID)


SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    pass


class Vocab:
    """Bijection between labels and dense indices ``0..n-1`` in insertion order."""

    def __init__(self, labels: Iterable = ()) -> None:
        self._labels: list = []
        self._index: dict = {}
        for label in labels:
            self.add(label)

    def add(self, label) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._index[label] = idx
        return idx

    def index(self, label) -> int:
        return self._index[label]

    def get(self, label, default=None):
        return self._index.get(label, default)

    def label(self, idx: int):
        return self._labels[idx]

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self) -> Iterator:
        return iter(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"Vocab({len(self)} labels)"

    @property
    def labels(self) -> tuple:
        return tuple(self._labels)


@dataclass(frozen=True, order=True)
class Fact:
    """A main triple with optional ordered qualifiers and an optional interval.

    Covers plain triples (no qualifiers, no time), H-Facts, temporal facts
    and hyper-relational temporal facts.  Timestamps are raw integer values.
    """

    head: int
    relation: int
    tail: int
    qualifiers: tuple[tuple[int, int], ...] = ()
    begin: int | None = None
    end: int | None = None

    def __post_init__(self) -> None:
        if (self.begin is None) != (self.end is None):
            raise DatasetError("begin and end must be given together")
        if self.begin is not None and self.begin > self.end:
            raise DatasetError(f"interval begins after it ends: [{self.begin}, {self.end}]")

    @property
    def main(self) -> tuple[int, int, int]:
        return (self.head, self.relation, self.tail)

    @property
    def is_temporal(self) -> bool:
        return self.begin is not None

    @property
    def arity(self) -> int:
        return 2 + len(self.qualifiers)


@dataclass(frozen=True, order=True)
class NestedFact:
    subject: tuple[int, int, int]
    relation: int
    object: tuple[int, int, int]


@dataclass(frozen=True)
class Split:
    facts: tuple[Fact, ...] = ()
    nested: tuple[NestedFact, ...] = ()


@dataclass(frozen=True)
class SourceDataset:
    """One knowledge graph with its splits and vocabularies.

    ``timestamps`` holds integer time values in first-appearance order.
    ``extra_train`` are additional triples used only for training.
    """

    flavor: Flavor
    train: Split
    valid: Split
    test: Split
    entities: Vocab
    relations: Vocab
    nested_relations: Vocab = field(default_factory=Vocab)
    timestamps: Vocab = field(default_factory=Vocab)
    extra_train: tuple[Fact, ...] = ()

    def split(self, name: str) -> Split:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def splits(self) -> Iterator[tuple[str, Split]]:
        for name in SPLITS:
            yield name, getattr(self, name)

    def all_facts(self) -> Iterator[Fact]:
        for _, s in self.splits():
            yield from s.facts

    def all_nested(self) -> Iterator[NestedFact]:
        for _, s in self.splits():
            yield from s.nested

    def entity_label(self, idx: int) -> str:
        return self.entities.label(idx)

    def relation_label(self, idx: int) -> str:
        return self.relations.label(idx)

    def same_as(self, other: "SourceDataset") -> bool:
        """Fact-multiset and vocabulary equality."""
        from collections import Counter

        if self.flavor != other.flavor:
            return False
        for vocab in ("entities", "relations", "nested_relations", "timestamps"):
            if getattr(self, vocab) != getattr(other, vocab):
                return False
        for name, s in self.splits():
            o = other.split(name)
            if Counter(s.facts) != Counter(o.facts) or Counter(s.nested) != Counter(o.nested):
                return False
        return Counter(self.extra_train) == Counter(other.extra_train)


def check_dataset(ds: SourceDataset) -> None:
    """Raise :class:`DatasetError` when ids do not resolve or splits overlap."""
    from collections import Counter

    ne, nr, nn = len(ds.entities), len(ds.relations), len(ds.nested_relations)

    def check_fact(f: Fact, where: str) -> None:
        ids = [f.head, f.tail] + [v for _, v in f.qualifiers]
        rels = [f.relation] + [k for k, _ in f.qualifiers]
        if any(not 0 <= e < ne for e in ids) or any(not 0 <= r < nr for r in rels):
            raise DatasetError(f"{where}: unresolved id in {f}")
        if f.is_temporal and (f.begin not in ds.timestamps or f.end not in ds.timestamps):
            raise DatasetError(f"{where}: timestamp missing from vocabulary in {f}")

    atomic: set[tuple[int, int, int]] = set()
    for name, s in ds.splits():
        for f in s.facts:
            check_fact(f, name)
            atomic.add(f.main)
    for f in ds.extra_train:
        check_fact(f, "extra_train")
    for name, s in ds.splits():
        for nf in s.nested:
            if not 0 <= nf.relation < nn:
                raise DatasetError(f"{name}: unresolved nested relation in {nf}")
            for part in (nf.subject, nf.object):
                if part not in atomic:
                    raise DatasetError(f"{name}: nested fact refers to unknown atomic fact {part}")
    if not ds.train.facts:
        raise DatasetError("empty train split")
    seen = [Counter(s.facts) for _, s in ds.splits()]
    for i in range(3):
        for j in range(i + 1, 3):
            common = seen[i].keys() & seen[j].keys()
            if common:
                raise DatasetError(f"splits {SPLITS[i]} and {SPLITS[j]} share {len(common)} facts, "
                                   f"e.g. {next(iter(common))}")
