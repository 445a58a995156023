"""Minimal float64 numeric engine with reverse-mode gradients."""

from . import ops
from .fft import circ_corr, circ_corr_naive, circ_corr_values, correlation_aggregate
from .gradcheck import grad_check, max_relative_error, numeric_grad, relative_error
from .losses import smoothed_cross_entropy, smoothed_targets
from .optim import AdamState, AdamW, adamw_step
from .params import CheckpointError, ParamStore, read_checkpoint
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "AdamState", "AdamW", "CheckpointError", "ParamStore", "Tensor", "adamw_step", "as_tensor",
    "circ_corr", "circ_corr_naive", "circ_corr_values", "correlation_aggregate", "grad_check",
    "max_relative_error", "no_grad", "numeric_grad", "ops", "read_checkpoint", "relative_error",
    "smoothed_cross_entropy", "smoothed_targets",
]
