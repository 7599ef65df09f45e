"""Branch propagation, fusion and the GCN layer."""

import numpy as np

from ..exceptions import ShapeMismatchError
from ..graphgen import Graph
from ..models import Activation
from ..sobolev import gcn_operator
from ..sparse_core import SparseMatrix, as_dense, spmm


def activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if Activation(activation) == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def activation_grad(z: np.ndarray, grad: np.ndarray, activation: Activation) -> np.ndarray:
    """Chain rule through the activation, given the pre-activation z."""
    if Activation(activation) == Activation.RELU:
        return grad * (z > 0)
    return grad


def propagate(shift: SparseMatrix | None, h: np.ndarray) -> np.ndarray:
    """S H, where None stands for the identity branch."""
    return h if shift is None else spmm(shift, h)


def branch_forward(
    shift: SparseMatrix | None,
    h,
    weight,
    bias=None,
    activation: Activation = Activation.IDENTITY,
) -> np.ndarray:
    """sigma(S_rho H W_rho + b) for one branch; shift=None is the rho = 0 branch."""
    h = as_dense(h, "H")
    weight = as_dense(weight, "W")
    if h.shape[1] != weight.shape[0]:
        raise ShapeMismatchError(f"H is {h.shape} but W is {weight.shape}")
    z = propagate(shift, h) @ weight
    if bias is not None:
        z = z + np.asarray(bias, dtype=np.float64)
    return activate(z, activation)


def _check_branches(branches) -> list[np.ndarray]:
    branches = [np.asarray(b, dtype=np.float64) for b in branches]
    if not branches:
        raise ShapeMismatchError("fusion needs at least one branch")
    shape = branches[0].shape
    if any(b.shape != shape for b in branches):
        raise ShapeMismatchError(f"branch shapes differ: {[b.shape for b in branches]}")
    return branches


def fuse_linear(branches, mu) -> np.ndarray:
    """sum_i mu_i B_i."""
    branches = _check_branches(branches)
    mu = np.asarray(mu, dtype=np.float64).ravel()
    if len(mu) != len(branches):
        raise ShapeMismatchError(f"{len(mu)} fusion weights for {len(branches)} branches")
    fused = np.zeros_like(branches[0])
    for weight, branch in zip(mu, branches):
        fused += weight * branch
    return fused


def fuse_mlp(branches, weight_mlp) -> np.ndarray:
    """[B_0, B_1, ..., B_alpha] W_MLP (column-wise concatenation in branch order)."""
    branches = _check_branches(branches)
    weight_mlp = as_dense(weight_mlp, "W_MLP")
    concatenated = np.hstack(branches)
    if weight_mlp.shape[0] != concatenated.shape[1]:
        raise ShapeMismatchError(
            f"W_MLP has {weight_mlp.shape[0]} rows for {concatenated.shape[1]} fused columns"
        )
    return concatenated @ weight_mlp


def gcn_layer(
    graph: Graph | SparseMatrix,
    h,
    weight,
    bias=None,
    activation: Activation = Activation.RELU,
) -> np.ndarray:
    """sigma(D~^{-1/2} (A + I) D~^{-1/2} H W + b).

    Pass the operator instead of the graph to avoid rebuilding it per call.
    """
    operator = gcn_operator(graph) if isinstance(graph, Graph) else graph
    return branch_forward(operator, h, weight, bias, activation)
