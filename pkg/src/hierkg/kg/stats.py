"""Dataset summary statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .model import SourceDataset


@dataclass
class StatsReport:
    flavor: str
    facts: int
    train: int
    valid: int
    test: int
    entities: int
    relations: int
    with_qualifiers_pct: float
    arity_min: int
    arity_max: int
    nested_facts: int
    nested_relations: int
    timestamps: int
    time_min: int | None
    time_max: int | None
    extra_train: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def lines(self) -> list[str]:
        span = "-" if self.time_min is None else f"{self.time_min}..{self.time_max}"
        return [
            f"flavor            {self.flavor}",
            f"facts             {self.facts} (train {self.train} / valid {self.valid} / test {self.test})",
            f"entities          {self.entities}",
            f"relations         {self.relations}",
            f"with Q (%)        {self.with_qualifiers_pct:.2f}",
            f"arity             {self.arity_min}..{self.arity_max}",
            f"nested facts      {self.nested_facts} over {self.nested_relations} nested relations",
            f"timestamps        {self.timestamps} ({span})",
        ]


def dataset_stats(ds: SourceDataset) -> StatsReport:
    facts = list(ds.all_facts())
    n = len(facts)
    with_q = sum(1 for f in facts if f.qualifiers)
    arities = [f.arity for f in facts] or [2]
    times = list(ds.timestamps)
    return StatsReport(
        flavor=ds.flavor.value,
        facts=n,
        train=len(ds.train.facts),
        valid=len(ds.valid.facts),
        test=len(ds.test.facts),
        entities=len(ds.entities),
        relations=len(ds.relations),
        with_qualifiers_pct=100.0 * with_q / n if n else 0.0,
        arity_min=min(arities),
        arity_max=max(arities),
        nested_facts=sum(1 for _ in ds.all_nested()),
        nested_relations=len(ds.nested_relations),
        timestamps=len(times),
        time_min=min(times) if times else None,
        time_max=max(times) if times else None,
        extra_train=len(ds.extra_train),
    )
