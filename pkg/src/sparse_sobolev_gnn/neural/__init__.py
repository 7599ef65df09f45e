"""S2-GNN layers, network, optimizer and training loop."""

from .layers import branch_forward, fuse_linear, fuse_mlp, gcn_layer
from .network import (
    LayerParams,
    Network,
    accuracy,
    backward,
    forward,
    init_params,
    masked_cross_entropy,
    named_gradients,
    parameter_count,
    predict,
)
from .optim import Adam
from .training import epsilon_sensitivity, fit, train

__all__ = [
    "Adam",
    "LayerParams",
    "Network",
    "accuracy",
    "backward",
    "branch_forward",
    "epsilon_sensitivity",
    "fit",
    "forward",
    "fuse_linear",
    "fuse_mlp",
    "gcn_layer",
    "init_params",
    "masked_cross_entropy",
    "named_gradients",
    "parameter_count",
    "predict",
    "train",
]
