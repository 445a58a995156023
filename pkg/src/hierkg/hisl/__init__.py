"""Hierarchical structure encoder."""

from .encoder import (ABLATIONS, TYPE_NAMES, EncoderConfig, EncoderState, encode, init_fact_nodes,
                      init_relation_nodes, initial_nodes, inter_fact_pass, intra_fact_pass, normalise_times,
                      register_encoder_params, relation_gates, time2vec)
from .graph import EncoderGraph, SampledEdges, build_view, sample_neighbors

__all__ = [
    "ABLATIONS", "TYPE_NAMES", "EncoderConfig", "EncoderGraph", "EncoderState", "SampledEdges", "build_view",
    "encode", "init_fact_nodes", "init_relation_nodes", "initial_nodes", "inter_fact_pass", "intra_fact_pass",
    "normalise_times", "register_encoder_params", "relation_gates", "sample_neighbors", "time2vec",
]
