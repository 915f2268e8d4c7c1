"""Segment-routed backpropagation for networks with auxiliary loss heads."""
from .gradrouter import (
    GradientSet,
    RoutingSpec,
    backward,
    backward_multiloss,
    backward_relay,
    backward_standard,
    oracle_relay_grads,
    validate_routing,
)
from .netgraph import ConfigError, NetworkGraph, build_network, forward, strip_aux_heads

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GradientSet",
    "NetworkGraph",
    "RoutingSpec",
    "backward",
    "backward_multiloss",
    "backward_relay",
    "backward_standard",
    "build_network",
    "forward",
    "oracle_relay_grads",
    "strip_aux_heads",
    "validate_routing",
]
