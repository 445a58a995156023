"""Hierarchical knowledge-graph representation: lifting, encoding, decoding, evaluation."""

__version__ = "0.1.0"
