"""Constructive pruning of random ReLU networks.

``net`` holds networks and masks, ``weight_prune`` the weight-subnetwork
constructions, ``neuron_prune`` the random-features neuron-subnetworks and
``verify`` the measurement harness.
"""
from __future__ import annotations

from .kernels import BACKEND
from .net import (
    BinaryMask,
    DenseNetwork,
    RngStream,
    TargetSpec,
    active_count,
    apply_mask,
    forward,
    forward_trace,
    sample_random_net,
    sample_target_net,
    spectral_norm,
)
from .weight_prune import (
    ConstructionFailed,
    PruneCertificate,
    prune_deep,
    prune_layer,
    prune_linear,
    prune_neuron,
    prune_scalar,
    prune_two_layer_target,
    required_width,
)

__version__ = "0.1.0"
