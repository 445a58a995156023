"""Data model, file formats, statistics, merging and synthetic data."""

from .io import (canonical_text, dataset_from_labels, fact_labels, load_dataset, nested_labels,
                 parse_dataset, read_facts, write_dataset, write_facts)
from .merge import MergeResult, merge_hybrid, read_sources, write_merge
from .model import SPLITS, DatasetError, Fact, Flavor, NestedFact, SourceDataset, Split, Vocab, check_dataset
from .stats import StatsReport, dataset_stats
from .synthetic import SyntheticSpec, generate_synthetic, rule_tail

__all__ = [
    "SPLITS", "DatasetError", "Fact", "Flavor", "MergeResult", "NestedFact", "SourceDataset", "Split",
    "StatsReport", "SyntheticSpec", "Vocab", "canonical_text", "check_dataset", "dataset_from_labels",
    "dataset_stats", "fact_labels", "generate_synthetic", "load_dataset", "merge_hybrid", "nested_labels",
    "parse_dataset", "read_facts", "read_sources", "rule_tail", "write_dataset", "write_facts", "write_merge",
]
