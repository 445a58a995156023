"""Filtered ranking and metric aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

HITS = (1, 3, 10)


def rank(scores: np.ndarray, gold: int, filter_set: Iterable[int] = ()) -> int:
    """Filtered rank of ``gold``.

    Known fillers other than gold are removed.  Ties with gold count half:
    ``1 + #greater + ceil(#equal / 2)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(scores.shape[0], dtype=bool)
    others = [c for c in filter_set if c != gold]
    if others:
        keep[np.asarray(others, dtype=np.int64)] = False
    s = scores[gold]
    keep[gold] = False
    comp = scores[keep]
    greater = int(np.count_nonzero(comp > s))
    equal = int(np.count_nonzero(comp == s))
    return 1 + greater + (equal + 1) // 2


def rank_rows(scores: np.ndarray, golds: np.ndarray, filters: list) -> np.ndarray:
    """:func:`rank` for every row of a score matrix."""
    scores = np.array(scores, dtype=np.float64)
    n = scores.shape[0]
    golds = np.asarray(golds, dtype=np.int64)
    s = scores[np.arange(n), golds].copy()
    for i, f in enumerate(filters):
        if f:
            scores[i, np.asarray(list(f), dtype=np.int64)] = -np.inf
    scores[np.arange(n), golds] = -np.inf
    # gold itself is excluded; nan never occurs for finite inputs
    greater = np.count_nonzero(scores > s[:, None], axis=1)
    equal = np.count_nonzero(scores == s[:, None], axis=1)
    return 1 + greater + (equal + 1) // 2


def metrics(ranks: Iterable[int]) -> dict:
    r = np.asarray(list(ranks), dtype=np.float64)
    if r.size == 0:
        return {"mr": None, "mrr": None, "hits1": None, "hits3": None, "hits10": None, "n": 0}
    out = {"mr": float(r.mean()), "mrr": float((1.0 / r).mean())}
    for k in HITS:
        out[f"hits{k}"] = float((r <= k).mean())
    out["n"] = int(r.size)
    return out


@dataclass
class RankingReport:
    task: str
    filter_mode: str
    ranks: dict[str, list[int]] = field(default_factory=dict)

    @property
    def categories(self) -> dict[str, dict]:
        return {name: metrics(r) for name, r in self.ranks.items()}

    def metric(self, category: str, name: str = "mrr") -> float:
        return self.categories[category][name]

    def to_dict(self) -> dict:
        return {"task": self.task, "filter_mode": self.filter_mode, "categories": self.categories}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "filter_mode", "category", "mr", "mrr", "hits1", "hits3", "hits10", "n"])
        for name, m in sorted(self.categories.items()):
            w.writerow([self.task, self.filter_mode, name] + [m[k] for k in ("mr", "mrr", "hits1", "hits3", "hits10", "n")])
        return buf.getvalue()

    def ranks_text(self, category: str) -> str:
        return "".join(f"{r}\n" for r in self.ranks[category])
