"""Multi-layer S2-GNN with a cached forward pass and hand-derived gradients."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from ..exceptions import InvalidGraphError, MissingCacheError, ShapeMismatchError
from ..graphgen import Graph
from ..models import Activation, Baseline, FusionMode, ModelConfig
from ..sobolev import ShiftBank, build_shift_bank, gcn_operator
from ..sparse_core import SparseMatrix, as_dense
from .layers import activate, activation_grad, fuse_linear, fuse_mlp, propagate

logger = logging.getLogger(__name__)


@dataclass
class LayerParams:
    """Trainable tensors of one layer.

    Attributes:
        branch_weights: W_i per branch, each H_l x H_{l+1}.
        branch_biases: b_i per branch, each of length H_{l+1}.
        fusion_linear: mu_0..mu_alpha (linear fusion only).
        fusion_mlp: W_MLP of shape (n_branches * H_{l+1}) x H_{l+1} (MLP fusion only).
    """

    branch_weights: list[np.ndarray]
    branch_biases: list[np.ndarray]
    fusion_linear: np.ndarray | None = None
    fusion_mlp: np.ndarray | None = None

    @property
    def n_branches(self) -> int:
        return len(self.branch_weights)

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors keyed by a stable name. The arrays are shared, not copied."""
        tensors = {}
        for i, (weight, bias) in enumerate(zip(self.branch_weights, self.branch_biases)):
            tensors[f"{prefix}.W{i}"] = weight
            tensors[f"{prefix}.b{i}"] = bias
        if self.fusion_linear is not None:
            tensors[f"{prefix}.mu"] = self.fusion_linear
        if self.fusion_mlp is not None:
            tensors[f"{prefix}.W_mlp"] = self.fusion_mlp
        return tensors

    def copy(self) -> "LayerParams":
        return LayerParams(
            branch_weights=[w.copy() for w in self.branch_weights],
            branch_biases=[b.copy() for b in self.branch_biases],
            fusion_linear=None if self.fusion_linear is None else self.fusion_linear.copy(),
            fusion_mlp=None if self.fusion_mlp is None else self.fusion_mlp.copy(),
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, in_dim: int, seed: int | None = None) -> list[LayerParams]:
    """Glorot-uniform weights, zero biases, mu_i = 1 / n_branches."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_branches = config.n_branches
    layers = []
    for fan_in, fan_out in config.layer_dims(in_dim):
        weights = [_glorot(rng, fan_in, fan_out) for _ in range(n_branches)]
        biases = [np.zeros(fan_out) for _ in range(n_branches)]
        mu = None
        mlp = None
        if config.baseline == Baseline.S2GNN and config.fusion == FusionMode.LINEAR:
            mu = np.full(n_branches, 1.0 / n_branches)
        elif config.baseline == Baseline.S2GNN and config.fusion == FusionMode.MLP:
            mlp = _glorot(rng, n_branches * fan_out, fan_out)
        layers.append(LayerParams(weights, biases, mu, mlp))
    return layers


def parameter_count(params: list[LayerParams]) -> int:
    return sum(t.size for i, layer in enumerate(params) for t in layer.named(str(i)).values())


def masked_cross_entropy(log_probs, labels, mask) -> float:
    """Mean negative log-likelihood over the masked nodes."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    idx = _masked_indices(labels, mask, log_probs.shape)
    labels = np.asarray(labels, dtype=np.int64)
    return float(-np.mean(log_probs[idx, labels[idx]]))


def accuracy(log_probs, labels, mask) -> float:
    """Fraction of masked nodes whose arg-max class equals the label."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    idx = _masked_indices(labels, mask, log_probs.shape)
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(np.argmax(log_probs[idx], axis=1) == labels[idx]))


def _masked_indices(labels, mask, shape: tuple[int, int]) -> np.ndarray:
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if labels.shape != (shape[0],) or mask.shape != (shape[0],):
        raise ShapeMismatchError(
            f"labels {labels.shape} and mask {mask.shape} must cover {shape[0]} nodes"
        )
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise InvalidGraphError("the loss mask selects no nodes")
    masked = labels[idx]
    if masked.min() < 0 or masked.max() >= shape[1]:
        raise InvalidGraphError(f"masked labels must lie in [0, {shape[1]})")
    return idx


@dataclass
class _LayerCache:
    keep: np.ndarray | None  # inverted-dropout scale mask, None when dropout is off
    propagated: list[np.ndarray]  # S_i H
    pre_activations: list[np.ndarray]  # Z_i = S_i H W_i + b_i
    branches: list[np.ndarray]  # B_i = sigma(Z_i)
    fused: np.ndarray


class Network:
    """S2-GNN for node classification on one fixed graph.

    The shift operators are built once at construction. forward() caches the
    intermediates that backward() needs; every forward overwrites the cache.
    """

    def __init__(
        self,
        config: ModelConfig,
        graph: Graph,
        in_dim: int,
        params: list[LayerParams] | None = None,
        bank: ShiftBank | None = None,
    ):
        config.validate()
        self.config = config
        self.n_nodes = graph.n_nodes
        self.in_dim = in_dim
        self.bank = None
        self.operators = self._build_operators(graph, bank)
        self.params = params if params is not None else init_params(config, in_dim)
        self._check_params()
        logger.debug(
            f"Network: {self.n_layers} layers x {len(self.operators)} branches, "
            f"{parameter_count(self.params)} parameters"
        )
        self._cache: list[_LayerCache] | None = None
        self._log_probs: np.ndarray | None = None

    def _build_operators(self, graph: Graph, bank: ShiftBank | None) -> list[SparseMatrix | None]:
        config = self.config
        if config.baseline == Baseline.GCN:
            return [gcn_operator(graph)]
        alpha = 1 if config.fusion == FusionMode.NONE else config.alpha
        if bank is None:
            bank = build_shift_bank(
                graph, config.epsilon, alpha, base_kind=config.base_kind, mode=config.bank_mode
            )
        elif bank.alpha != alpha or bank.n_nodes != graph.n_nodes:
            raise ShapeMismatchError(
                f"shift bank (alpha={bank.alpha}, N={bank.n_nodes}) does not fit the model"
            )
        self.bank = bank
        if config.fusion == FusionMode.NONE:
            return [bank.operator(1)]
        return [bank.operator(rho) for rho in range(alpha + 1)]

    def _check_params(self) -> None:
        dims = self.config.layer_dims(self.in_dim)
        if len(self.params) != len(dims):
            raise ShapeMismatchError(f"{len(self.params)} layers of parameters for {len(dims)}")
        for layer, (fan_in, fan_out) in zip(self.params, dims):
            if layer.n_branches != len(self.operators):
                raise ShapeMismatchError(
                    f"{layer.n_branches} branch weights for {len(self.operators)} operators"
                )
            for weight, bias in zip(layer.branch_weights, layer.branch_biases):
                if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
                    raise ShapeMismatchError(
                        f"branch weight {weight.shape} / bias {bias.shape}, "
                        f"expected ({fan_in}, {fan_out}) / ({fan_out},)"
                    )

    @property
    def n_layers(self) -> int:
        return len(self.params)

    def stored_entries(self) -> int:
        """Operator entries touched by one layer."""
        return sum(op.nnz for op in self.operators if op is not None)

    def named_parameters(self) -> dict[str, np.ndarray]:
        tensors = {}
        for i, layer in enumerate(self.params):
            tensors.update(layer.named(f"layer{i}"))
        return tensors

    def load_named_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy tensors into the current parameters, matching names and shapes."""
        current = self.named_parameters()
        missing = set(current) - set(tensors)
        if missing:
            raise ShapeMismatchError(f"missing parameters: {sorted(missing)}")
        for name, target in current.items():
            source = np.asarray(tensors[name], dtype=np.float64)
            if source.shape != target.shape:
                raise ShapeMismatchError(f"{name}: shape {source.shape}, expected {target.shape}")
            target[...] = source

    def snapshot(self) -> list[LayerParams]:
        return [layer.copy() for layer in self.params]

    def restore(self, params: list[LayerParams]) -> None:
        self.params = [layer.copy() for layer in params]

    def _fuse(self, layer: LayerParams, branches: list[np.ndarray]) -> np.ndarray:
        if layer.fusion_linear is not None:
            return fuse_linear(branches, layer.fusion_linear)
        if layer.fusion_mlp is not None:
            return fuse_mlp(branches, layer.fusion_mlp)
        return branches[0]

    def forward(
        self, features, training: bool = False, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Log-probabilities, N x C. Dropout on layer inputs only when training."""
        h = as_dense(features, "features")
        if h.shape != (self.n_nodes, self.in_dim):
            raise ShapeMismatchError(
                f"features are {h.shape}, expected ({self.n_nodes}, {self.in_dim})"
            )
        dropout = self.config.dropout if training else 0.0
        if dropout > 0 and rng is None:
            rng = np.random.default_rng(self.config.seed)
        activation = self.config.branch_activation

        cache = []
        for depth, layer in enumerate(self.params):
            keep = None
            if dropout > 0:
                keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * keep
            propagated = [propagate(op, h) for op in self.operators]
            pre = [
                p @ w + b
                for p, w, b in zip(propagated, layer.branch_weights, layer.branch_biases)
            ]
            branches = [activate(z, activation) for z in pre]
            fused = self._fuse(layer, branches)
            cache.append(_LayerCache(keep, propagated, pre, branches, fused))
            if depth < self.n_layers - 1:
                h = np.maximum(fused, 0.0)
            else:
                h = log_softmax(fused, axis=1)

        self._cache = cache
        self._log_probs = h
        return h

    def activation_pattern(self) -> list[np.ndarray]:
        """Signs of every ReLU input in the last forward pass."""
        if self._cache is None:
            raise MissingCacheError("activation_pattern() needs a forward pass first")
        pattern = [cached.fused > 0 for cached in self._cache[:-1]]
        if self.config.branch_activation == Activation.RELU:
            pattern.extend(z > 0 for cached in self._cache for z in cached.pre_activations)
        return pattern

    def l2_penalty(self) -> float:
        """0.5 * weight_decay * sum of squared branch and W_MLP weights."""
        total = 0.0
        for layer in self.params:
            total += sum(float(np.sum(w * w)) for w in layer.branch_weights)
            if layer.fusion_mlp is not None:
                total += float(np.sum(layer.fusion_mlp**2))
        return 0.5 * self.config.weight_decay * total

    def loss(self, labels, mask) -> float:
        """Masked cross-entropy of the cached forward pass plus the L2 penalty."""
        if self._log_probs is None:
            raise MissingCacheError("loss() needs a forward pass first")
        return masked_cross_entropy(self._log_probs, labels, mask) + self.l2_penalty()

    def backward(self, labels, mask) -> list[LayerParams]:
        """Gradients of loss(labels, mask) for every parameter of the last forward."""
        if self._cache is None or self._log_probs is None:
            raise MissingCacheError("backward() needs the intermediates of a forward pass")
        log_probs = self._log_probs
        idx = _masked_indices(labels, mask, log_probs.shape)
        labels = np.asarray(labels, dtype=np.int64)
        wd = self.config.weight_decay
        activation = self.config.branch_activation

        d_log_probs = np.zeros_like(log_probs)
        d_log_probs[idx, labels[idx]] = -1.0 / idx.size
        # Through log-softmax
        d_fused = d_log_probs - np.exp(log_probs) * d_log_probs.sum(axis=1, keepdims=True)

        grads: list[LayerParams] = [None] * self.n_layers
        for depth in reversed(range(self.n_layers)):
            layer = self.params[depth]
            cached = self._cache[depth]

            d_mu = None
            d_mlp = None
            if layer.fusion_linear is not None:
                d_mu = np.array([np.sum(d_fused * b) for b in cached.branches])
                d_branches = [mu * d_fused for mu in layer.fusion_linear]
            elif layer.fusion_mlp is not None:
                d_mlp = np.hstack(cached.branches).T @ d_fused + wd * layer.fusion_mlp
                d_concat = d_fused @ layer.fusion_mlp.T
                d_branches = np.split(d_concat, layer.n_branches, axis=1)
            else:
                d_branches = [d_fused]

            d_weights = []
            d_biases = []
            d_input = np.zeros_like(cached.propagated[0])
            for op, weight, propagated, z, d_branch in zip(
                self.operators, layer.branch_weights, cached.propagated,
                cached.pre_activations, d_branches,
            ):
                d_z = activation_grad(z, d_branch, activation)
                d_weights.append(propagated.T @ d_z + wd * weight)
                d_biases.append(d_z.sum(axis=0))
                # S is symmetric, so S^T (dZ W^T) = S (dZ W^T)
                d_input += propagate(op, d_z @ weight.T)
            grads[depth] = LayerParams(d_weights, d_biases, d_mu, d_mlp)

            if cached.keep is not None:
                d_input = d_input * cached.keep
            if depth > 0:
                d_fused = d_input * (self._cache[depth - 1].fused > 0)
        return grads

    def predict(self, features) -> np.ndarray:
        """Class id per node (evaluation mode)."""
        return np.argmax(self.forward(features, training=False), axis=1)


def forward(network: Network, features, training: bool = False, rng=None) -> np.ndarray:
    return network.forward(features, training=training, rng=rng)


def backward(network: Network, labels, mask) -> list[LayerParams]:
    return network.backward(labels, mask)


def predict(network: Network, features) -> np.ndarray:
    return network.predict(features)


def named_gradients(grads: list[LayerParams]) -> dict[str, np.ndarray]:
    """Gradients keyed like Network.named_parameters()."""
    tensors = {}
    for i, layer in enumerate(grads):
        tensors.update(layer.named(f"layer{i}"))
    return tensors
