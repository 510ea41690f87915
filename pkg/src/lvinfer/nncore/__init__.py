"""Minimal dense-network engine: layers, spectral normalization, Adam, gradient checks."""

from .layers import (
    ACTIVATION_LIPSCHITZ,
    ACTIVATIONS,
    LEAKY_SLOPE,
    DenseLayer,
    Mlp,
    dense_layer,
    effective_weight,
    flatten_params,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_params,
    set_params,
    spectral_normalize,
)
from .optim import AdamState, adam_init, adam_step
from .gradcheck import central_difference, grad_check
from .checkpoint import load_mlp, save_mlp

__all__ = [
    "ACTIVATION_LIPSCHITZ",
    "ACTIVATIONS",
    "LEAKY_SLOPE",
    "AdamState",
    "DenseLayer",
    "Mlp",
    "adam_init",
    "adam_step",
    "central_difference",
    "dense_layer",
    "effective_weight",
    "flatten_params",
    "grad_check",
    "load_mlp",
    "mlp_backward",
    "mlp_forward",
    "mlp_forward_cached",
    "mlp_params",
    "save_mlp",
    "set_params",
    "spectral_normalize",
]
