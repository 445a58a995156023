"""Union of two datasets into one hybrid graph with leakage-filtered test sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .io import dataset_from_labels, fact_labels, nested_labels, read_facts, write_dataset, write_facts
from .model import Fact, Flavor, SourceDataset


@dataclass
class MergeResult:
    dataset: SourceDataset
    # per-source held-out facts, in merged ids
    sources: dict[str, dict[str, tuple[Fact, ...]]] = field(default_factory=dict)
    removed: dict[str, dict[str, int]] = field(default_factory=dict)

    def source_test(self, name: str) -> tuple[Fact, ...]:
        return self.sources[name]["test"]

    def report(self) -> dict:
        return {"sources": list(self.sources), "removed": self.removed}


def _leaky(facts, other_train_mains: set) -> tuple[list, int]:
    kept = [f for f in facts if f[:3] not in other_train_mains]
    return kept, len(facts) - len(kept)


def merge_hybrid(a: SourceDataset, b: SourceDataset, names: tuple[str, str] = ("a", "b")) -> MergeResult:
    """Merge ``a`` and ``b`` by label.

    Entities and relations with equal labels become one symbol.  Train sets
    are concatenated unchanged.  A held-out fact of one input is dropped when
    its main triple occurs in the other input's train set; valid sets get the
    same treatment so the merged splits stay disjoint.
    """
    if names[0] == names[1]:
        raise ValueError("source names must differ")
    la = {s: [fact_labels(a, f) for f in a.split(s).facts] for s in ("train", "valid", "test")}
    lb = {s: [fact_labels(b, f) for f in b.split(s).facts] for s in ("train", "valid", "test")}
    mains_a = {f[:3] for f in la["train"]} | {f[:3] for f in (fact_labels(a, e) for e in a.extra_train)}
    mains_b = {f[:3] for f in lb["train"]} | {f[:3] for f in (fact_labels(b, e) for e in b.extra_train)}
    removed = {names[0]: {}, names[1]: {}}
    held: dict[str, dict[str, list]] = {names[0]: {}, names[1]: {}}
    for s in ("valid", "test"):
        held[names[0]][s], removed[names[0]][s] = _leaky(la[s], mains_b)
        held[names[1]][s], removed[names[1]][s] = _leaky(lb[s], mains_a)

    def nested_of(ds: SourceDataset, split: str, keep_mains: set | None) -> list:
        out = [nested_labels(ds, nf) for nf in ds.split(split).nested]
        if keep_mains is not None:
            out = [n for n in out if n[0] in keep_mains and n[2] in keep_mains]
        return out

    splits = {"train": (la["train"] + lb["train"], nested_of(a, "train", None) + nested_of(b, "train", None))}
    for s in ("valid", "test"):
        facts = held[names[0]][s] + held[names[1]][s]
        atomic = {f[:3] for f in la["train"] + lb["train"] + facts}
        splits[s] = (facts, nested_of(a, s, atomic) + nested_of(b, s, atomic))
    extra = [fact_labels(a, f)[:3] for f in a.extra_train] + [fact_labels(b, f)[:3] for f in b.extra_train]
    merged = dataset_from_labels(Flavor.HYBRID, splits, extra)

    def to_ids(lf) -> Fact:
        E, R = merged.entities.index, merged.relations.index
        return Fact(E(lf[0]), R(lf[1]), E(lf[2]), tuple((R(k), E(v)) for k, v in lf[3]), lf[4], lf[5])

    sources = {n: {s: tuple(to_ids(f) for f in held[n][s]) for s in ("valid", "test")} for n in names}
    return MergeResult(merged, sources, removed)


def write_merge(result: MergeResult, path: str | Path) -> Path:
    """Write the merged dataset plus one ``test.<source>.jsonl`` file per input."""
    root = write_dataset(result.dataset, path)
    for name, parts in result.sources.items():
        for s, facts in parts.items():
            write_facts(result.dataset, facts, root / f"{s}.{name}.jsonl")
    meta = {"flavor": Flavor.HYBRID.value, **result.report()}
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return root


def read_sources(ds: SourceDataset, path: str | Path) -> dict[str, dict[str, tuple[Fact, ...]]]:
    """Per-source held-out facts of a merged dataset directory (empty if not merged)."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        return {}
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    out = {}
    for name in meta.get("sources", []):
        out[name] = {s: tuple(read_facts(ds, root / f"{s}.{name}.jsonl")) for s in ("valid", "test")}
    return out

