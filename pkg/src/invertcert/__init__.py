"""Certified local invertibility of ReLU networks via mixed-integer programming."""

from .network import (
    ActivationPattern,
    Layer,
    NetworkFormatError,
    ReluMlp,
    ResidualNet,
    embed_parameter,
    flatten_residual,
    forward,
    forward_residual,
    forward_trace,
    load_network,
    prune_magnitude,
    random_network,
    save_network,
)

__all__ = [
    "ActivationPattern",
    "Layer",
    "NetworkFormatError",
    "ReluMlp",
    "ResidualNet",
    "embed_parameter",
    "flatten_residual",
    "forward",
    "forward_residual",
    "forward_trace",
    "load_network",
    "prune_magnitude",
    "random_network",
    "save_network",
]

__version__ = "0.1.0"
