"""Query serialization, masked transformer decoding and candidate scoring."""

from .conve import conv_geometry, conve_features, conve_score, grid_shape, register_conve_params
from .sequence import ENT, FACT, REL, SPACES, TIME, Query, TokenTable, fact_tokens, nested_tokens, serialize
from .transformer import (DECODERS, DecoderConfig, apply_mask, register_transformer_params, score_candidates,
                          self_attention, transformer_decode)

__all__ = [
    "DECODERS", "ENT", "FACT", "REL", "SPACES", "TIME", "DecoderConfig", "Query", "TokenTable", "apply_mask",
    "conv_geometry", "conve_features", "conve_score", "fact_tokens", "grid_shape", "nested_tokens",
    "register_conve_params", "register_transformer_params", "score_candidates", "self_attention", "serialize",
    "transformer_decode",
]
