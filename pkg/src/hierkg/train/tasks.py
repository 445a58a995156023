"""Link-prediction tasks: query generation and filter indices."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

from ..decoder.sequence import Query, fact_tokens, nested_tokens
from ..hidr import HidrGraph
from ..kg.model import Fact, Flavor, NestedFact, SourceDataset

TASK_KINDS = ("base", "hkg", "tkg", "htkg", "hybrid", "triple")
MASK_ROLES = ("so", "all")
FILTER_MODES = ("strict", "loose")

# report buckets fed by each query role
CATEGORY_ROLES = {
    "subject/object": ("head", "tail"),
    "all entities": ("head", "tail", "value"),
    "relation": ("relation",),
    "triple prediction": ("fact",),
}


@dataclass
class TaskSpec:
    kind: str = "hkg"
    mask_roles: str = "all"
    full_space: bool = False

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.mask_roles not in MASK_ROLES:
            raise ValueError(f"mask_roles must be one of {MASK_ROLES}")

    @classmethod
    def for_flavor(cls, flavor: Flavor | str, **kw) -> "TaskSpec":
        flavor = Flavor.parse(flavor)
        kind = {Flavor.TRIPLE: "base", Flavor.NKG: "base", Flavor.HKG: "hkg", Flavor.TKG: "tkg",
                Flavor.HTKG: "htkg", Flavor.HYBRID: "hybrid"}[flavor]
        if kind == "base" and "mask_roles" not in kw:
            kw["mask_roles"] = "so"
        return cls(kind=kind, **kw)

    def check(self, ds: SourceDataset) -> None:
        allowed = {
            "base": (Flavor.TRIPLE, Flavor.NKG, Flavor.HYBRID),
            "hkg": (Flavor.HKG, Flavor.HYBRID),
            "tkg": (Flavor.TKG, Flavor.HYBRID),
            "htkg": (Flavor.HTKG, Flavor.HYBRID),
            "hybrid": tuple(Flavor),
            "triple": (Flavor.NKG, Flavor.HYBRID),
        }[self.kind]
        if ds.flavor not in allowed:
            raise ValueError(f"task {self.kind!r} does not apply to a {ds.flavor.value} dataset")

    def to_dict(self) -> dict:
        return asdict(self)


def fact_queries(f: Fact, g: HidrGraph, task: TaskSpec) -> list[Query]:
    toks = fact_tokens(f, g)
    ent_space = "all" if task.full_space else "entities"
    out = [Query(toks, 0, ent_space, "head"), Query(toks, 2, ent_space, "tail")]
    if task.mask_roles == "all":
        for i in range(len(f.qualifiers)):
            out.append(Query(toks, 4 + 2 * i, ent_space, "value"))
    if task.full_space:
        out.append(Query(toks, 1, "all", "relation"))
    return out


def fact_index_of_main(g: HidrGraph) -> dict[tuple[int, int, int], int]:
    """Fact node index of the first atomic occurrence of each main triple that owns one."""
    atomic = [t for t in g.triples if t.part == "a"]
    out: dict[tuple[int, int, int], int] = {}
    for k, pos in enumerate(g.fact_origin):
        t = atomic[pos]
        out.setdefault((t.src, t.edge.ref, t.dst), k)
    return out


def nested_queries(nf: NestedFact, g: HidrGraph, fact_of: dict) -> list[Query]:
    toks = nested_tokens(fact_of[nf.subject], nf.relation, fact_of[nf.object], g)
    return [Query(toks, 0, "facts", "fact"), Query(toks, 2, "facts", "fact")]


def split_queries(ds: SourceDataset, g: HidrGraph, task: TaskSpec, split: str,
                  facts: Iterable[Fact] | None = None) -> list[Query]:
    """Queries for one split (``split="extra"`` covers the extra training triples).

    ``facts`` overrides the facts of the split, e.g. a per-source test set.
    """
    if task.kind == "triple":
        fact_of = fact_index_of_main(g)
        nested = () if split == "extra" else ds.split(split).nested
        return [q for nf in nested for q in nested_queries(nf, g, fact_of)]
    if facts is None:
        facts = ds.extra_train if split == "extra" else ds.split(split).facts
    return [q for f in facts for q in fact_queries(f, g, task)]


def filter_key(q: Query, mode: str = "strict") -> tuple:
    """Query with its masked slot blanked; ``loose`` keeps only the main triple
    (plus the key of a masked qualifier value)."""
    if mode not in FILTER_MODES:
        raise ValueError(f"filter mode must be one of {FILTER_MODES}")
    toks = list(q.tokens)
    toks[q.mask] = ("?", -1)
    if mode == "loose":
        keep = toks[:3]
        if q.mask >= 3:
            keep += [toks[q.mask - 1], toks[q.mask]]
        toks = keep
    return (q.mask, q.space, tuple(toks))


class FilterIndex:
    """Known fillers of every blanked query over all splits."""

    def __init__(self, mode: str = "strict") -> None:
        self.mode = mode
        self._index: dict[tuple, set] = {}

    def add(self, q: Query) -> None:
        self._index.setdefault(filter_key(q, self.mode), set()).add(q.gold_token)

    def known(self, q: Query) -> set:
        return self._index.get(filter_key(q, self.mode), set())

    def __len__(self) -> int:
        return len(self._index)


def build_queries(ds: SourceDataset, g: HidrGraph, task: TaskSpec, split: str = "test",
                  filter_mode: str = "strict", facts: Iterable[Fact] | None = None
                  ) -> tuple[list[Query], FilterIndex]:
    """Queries of ``split`` plus a filter index over train, valid, test and extra triples."""
    task.check(ds)
    index = FilterIndex(filter_mode)
    for s in ("train", "valid", "test", "extra"):
        for q in split_queries(ds, g, task, s):
            index.add(q)
    queries = split_queries(ds, g, task, split, facts)
    for q in queries:
        index.add(q)
    return queries, index
