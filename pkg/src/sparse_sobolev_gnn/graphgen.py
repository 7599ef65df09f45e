"""Graph construction, synthetic generators, perturbations and graph metrics."""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .exceptions import InvalidGraphError, ShapeMismatchError
from .sparse_core import SparseMatrix, as_dense

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12
UNLABELED = -1


class WeightDistribution(str, Enum):
    """Edge weight distribution for the random generators."""

    UNIT = "unit"
    UNIFORM = "uniform"  # uniform on (0, 1]


class SplitName(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def _row_indices(matrix: SparseMatrix) -> np.ndarray:
    return np.repeat(np.arange(matrix.n_rows), np.diff(matrix.row_ptr))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph.

    Attributes:
        adjacency: Symmetric, zero-diagonal adjacency with positive stored weights.
        node_labels: Optional integer label per node (-1 marks an unlabeled node).
        features: Optional N x F feature matrix.
    """

    adjacency: SparseMatrix
    node_labels: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        adjacency = self.adjacency
        if not adjacency.is_square:
            raise InvalidGraphError(f"adjacency must be square, got {adjacency.shape}")
        if not adjacency.is_symmetric():
            raise InvalidGraphError("adjacency must be exactly symmetric")
        if np.any(_row_indices(adjacency) == adjacency.col_idx):
            raise InvalidGraphError("adjacency must have an empty diagonal (no self-loops)")
        if np.any(adjacency.values <= 0):
            raise InvalidGraphError("edge weights must be positive")

        n = adjacency.n_rows
        if self.node_labels is not None:
            labels = np.asarray(self.node_labels)
            if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
                raise InvalidGraphError(f"node_labels must be {n} integers")
            object.__setattr__(self, "node_labels", labels.astype(np.int64))
        if self.features is not None:
            features = as_dense(self.features, "features")
            if features.shape[0] != n:
                raise InvalidGraphError(
                    f"features have {features.shape[0]} rows for a {n}-node graph"
                )
            object.__setattr__(self, "features", features)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n_rows

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        """Weighted degrees d_i = sum_j a_ij."""
        return self.adjacency.row_sums()

    def laplacian(self) -> SparseMatrix:
        """Combinatorial Laplacian L = D - A."""
        csr = self.adjacency.to_scipy()
        return SparseMatrix.from_scipy(sp.diags(self.degrees()) - csr)

    def with_labels(self, labels) -> "Graph":
        return Graph(self.adjacency, np.asarray(labels), self.features)

    def with_features(self, features) -> "Graph":
        return Graph(self.adjacency, self.node_labels, features)

    def permuted(self, order) -> "Graph":
        """Relabel nodes so that old node order[i] becomes node i."""
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.n_nodes)):
            raise InvalidGraphError("order must be a permutation of the nodes")
        csr = self.adjacency.to_scipy()
        return Graph(
            SparseMatrix.from_scipy(csr[order][:, order]),
            None if self.node_labels is None else self.node_labels[order],
            None if self.features is None else self.features[order],
        )


def _symmetric_from_upper(rows, cols, weights, n: int) -> SparseMatrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    return SparseMatrix.from_coo(
        np.concatenate([rows, cols]),
        np.concatenate([cols, rows]),
        np.concatenate([weights, weights]),
        shape=(n, n),
    )


def graph_from_edges(n: int, edges, weights=None, **kwargs) -> Graph:
    """Build a graph from undirected (i, j) pairs, each listed once."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(edges))
    return Graph(_symmetric_from_upper(edges[:, 0], edges[:, 1], weights, n), **kwargs)


def knn_graph(features, k: int, kernel_bandwidth: float | str = "auto") -> Graph:
    """k-nearest-neighbor graph with Gaussian kernel weights.

    Each node links to its k nearest neighbors (Euclidean distance) and the
    edge set is symmetrized by union. Weights are exp(-d^2 / sigma^2) in
    (0, 1]; with "auto", sigma is the mean distance to the k-th neighbor.
    """
    points = as_dense(features, "features")
    n = points.shape[0]
    if k < 1 or k >= n:
        raise InvalidGraphError(f"k must satisfy 1 <= k < N={n}, got {k}")

    distances, neighbors = cKDTree(points).query(points, k=k + 1)
    distances = distances.reshape(n, k + 1)
    neighbors = neighbors.reshape(n, k + 1)

    # Drop each node itself; with duplicate points it may not come first
    drop = neighbors == np.arange(n)[:, None]
    drop[~drop.any(axis=1), -1] = True
    keep = ~drop
    neighbors = neighbors[keep].reshape(n, k)
    distances = distances[keep].reshape(n, k)

    if kernel_bandwidth == "auto":
        sigma = float(np.mean(distances[:, -1]))
        if sigma == 0.0:
            logger.warning("all k-th neighbor distances are zero; using sigma = 1")
            sigma = 1.0
    else:
        sigma = float(kernel_bandwidth)
        if not sigma > 0:
            raise InvalidGraphError(f"kernel bandwidth must be positive, got {sigma}")

    weights = np.exp(-(distances**2) / sigma**2)
    weights = np.maximum(weights, np.finfo(np.float64).tiny)

    directed = sp.coo_matrix(
        (weights.ravel(), (np.repeat(np.arange(n), k), neighbors.ravel())), shape=(n, n)
    ).tocsr()
    adjacency = SparseMatrix.from_scipy(directed.maximum(directed.transpose()))
    graph = Graph(adjacency, features=points)
    logger.info(f"k-NN graph: N={n}, k={k}, sigma={sigma:.4g}, |E|={graph.n_edges}")
    return graph


def _draw_weights(
    count: int, weight_dist: WeightDistribution, rng: np.random.Generator
) -> np.ndarray:
    if WeightDistribution(weight_dist) == WeightDistribution.UNIFORM:
        return 1.0 - rng.random(count)
    return np.ones(count)


def _check_probability(name: str, value: float, open_interval: bool = False) -> None:
    if open_interval:
        if not 0.0 < value < 1.0:
            raise InvalidGraphError(f"{name} must lie in (0, 1), got {value}")
    elif not 0.0 <= value <= 1.0:
        raise InvalidGraphError(f"{name} must lie in [0, 1], got {value}")


def erdos_renyi(
    n: int,
    p: float,
    weight_dist: WeightDistribution = WeightDistribution.UNIT,
    seed: int | None = None,
) -> Graph:
    """Erdos-Renyi graph: every unordered pair is an edge with probability p."""
    _check_probability("p", p, open_interval=True)
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    for i in range(n - 1):
        hits = np.nonzero(rng.random(n - i - 1) < p)[0]
        if hits.size:
            rows.append(np.full(hits.size, i))
            cols.append(hits + i + 1)
    upper_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    upper_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    weights = _draw_weights(len(upper_rows), weight_dist, rng)
    return Graph(_symmetric_from_upper(upper_rows, upper_cols, weights, n))


def sbm(
    n: int,
    blocks: int,
    p_in: float,
    p_out: float,
    seed: int | None = None,
    weight_dist: WeightDistribution = WeightDistribution.UNIT,
) -> Graph:
    """Stochastic block model with equal blocks; labels are block ids."""
    if blocks < 1 or n % blocks != 0:
        raise InvalidGraphError(f"{blocks} blocks do not divide N={n}")
    _check_probability("p_in", p_in)
    _check_probability("p_out", p_out)
    if p_in <= p_out:
        logger.debug(f"SBM with p_in={p_in} <= p_out={p_out} is not homophilous")

    labels = np.arange(n) // (n // blocks)
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    for i in range(n - 1):
        others = labels[i + 1:]
        probability = np.where(others == labels[i], p_in, p_out)
        hits = np.nonzero(rng.random(n - i - 1) < probability)[0]
        if hits.size:
            rows.append(np.full(hits.size, i))
            cols.append(hits + i + 1)
    upper_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    upper_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    weights = _draw_weights(len(upper_rows), weight_dist, rng)
    return Graph(_symmetric_from_upper(upper_rows, upper_cols, weights, n), node_labels=labels)


def sbm_features(labels, dim: int, signal: float = 1.0, seed: int | None = None) -> np.ndarray:
    """Gaussian features whose class means are separated by `signal`."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    n_classes = int(labels.max()) + 1
    means = rng.standard_normal((n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return signal * means[labels] + rng.standard_normal((len(labels), dim))


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Edge noise E in the admissible set: symmetric, zero diagonal, |e_ij| <= a_ij.

    Attributes:
        noise: The matrix E.
        snr_db: Requested signal-to-noise ratio.
        achieved_snr_db: 10 log10(||A||_F^2 / ||E||_F^2) after projection.
    """

    noise: SparseMatrix
    snr_db: float
    achieved_snr_db: float

    def __post_init__(self):
        if not self.noise.is_symmetric():
            raise InvalidGraphError("perturbation must be symmetric")
        if np.any(_row_indices(self.noise) == self.noise.col_idx):
            raise InvalidGraphError("perturbation must have a zero diagonal")

    def degrees(self) -> np.ndarray:
        """Noise degrees d_{e_i} = sum_j e_ij (may be negative)."""
        return self.noise.row_sums()

    def admissible_for(self, graph: Graph) -> bool:
        """True if |e_ij| <= a_ij everywhere (so e_ij = 0 off the edge set)."""
        base = graph.adjacency.to_scipy()
        noise = self.noise.to_scipy()
        if noise.shape != base.shape:
            return False
        excess = abs(noise) - base
        return excess.nnz == 0 or bool(excess.data.max() <= 0.0)


def perturb(graph: Graph, snr_db: float, seed: int | None = None) -> Perturbation:
    """Draw edge noise at the given SNR and project it into the admissible set.

    Gaussian noise is drawn on the existing upper-triangular edges, scaled so that
    ||A||_F^2 / ||E||_F^2 = 10^(snr_db / 10), mirrored to the lower triangle and
    clamped entrywise into [-a_ij, a_ij]. Clamping only shrinks the noise, so the
    achieved SNR is at least the requested one.
    """
    upper = sp.triu(graph.adjacency.to_scipy(), k=1).tocoo()
    if upper.nnz == 0:
        raise InvalidGraphError("cannot perturb a graph without edges")
    n = graph.n_nodes
    if math.isinf(snr_db) and snr_db > 0:
        empty = SparseMatrix.from_coo([], [], [], shape=(n, n))
        return Perturbation(noise=empty, snr_db=snr_db, achieved_snr_db=math.inf)

    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(upper.nnz)
    signal_power = float(np.sum(graph.adjacency.values**2))
    raw_power = 2.0 * float(np.sum(raw**2))
    scale = math.sqrt(signal_power / (raw_power * 10.0 ** (snr_db / 10.0)))
    clamped = np.clip(raw * scale, -upper.data, upper.data)

    noise = _symmetric_from_upper(upper.row, upper.col, clamped, n)
    noise_power = float(np.sum(noise.values**2))
    achieved = 10.0 * math.log10(signal_power / noise_power) if noise_power > 0 else math.inf
    return Perturbation(noise=noise, snr_db=snr_db, achieved_snr_db=achieved)


def perturbed_graph(graph: Graph, perturbation: Perturbation) -> Graph:
    """Graph with adjacency A + E. Edges clamped to zero weight disappear."""
    if not perturbation.admissible_for(graph):
        raise InvalidGraphError("perturbation is not admissible for this graph")
    combined = graph.adjacency.to_scipy() + perturbation.noise.to_scipy()
    return Graph(SparseMatrix.from_scipy(combined), graph.node_labels, graph.features)


def perturb_weights(weights, snr_db: float, seed: int | None = None) -> np.ndarray:
    """Additive Gaussian noise on a weight matrix at the given SNR (no projection)."""
    weights = as_dense(weights, "weights")
    if math.isinf(snr_db) and snr_db > 0:
        return weights.copy()
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(weights.shape)
    raw_norm = float(np.linalg.norm(raw))
    if raw_norm == 0.0:
        return weights.copy()
    scale = float(np.linalg.norm(weights)) / (raw_norm * 10.0 ** (snr_db / 20.0))
    return weights + scale * raw


def homophily_index(graph: Graph) -> float:
    """Node-level homophily: mean over nodes of the same-label neighbor fraction.

    Neighbors are counted by the edge pattern, not by weight. Isolated nodes are
    skipped.
    """
    labels = graph.node_labels
    if labels is None or np.any(labels < 0):
        raise InvalidGraphError("homophily needs a label on every node")
    adjacency = graph.adjacency
    rows = _row_indices(adjacency)
    same = (labels[rows] == labels[adjacency.col_idx]).astype(np.float64)
    same_counts = np.bincount(rows, weights=same, minlength=graph.n_nodes)
    degree_counts = np.diff(adjacency.row_ptr)

    connected = degree_counts > 0
    isolated = int(graph.n_nodes - connected.sum())
    if isolated:
        logger.warning(f"homophily: skipping {isolated} isolated node(s)")
    if not connected.any():
        raise InvalidGraphError("homophily is undefined for a graph without edges")
    return float(np.mean(same_counts[connected] / degree_counts[connected]))


def sparsity_percentage(matrix) -> float:
    """Percentage of (numerically) zero entries; 0 means completely dense."""
    if isinstance(matrix, SparseMatrix):
        total = matrix.n_rows * matrix.n_cols
        nonzero = int(np.count_nonzero(np.abs(matrix.values) > ZERO_TOL))
    else:
        dense = np.asarray(matrix, dtype=np.float64)
        total = dense.size
        nonzero = int(np.count_nonzero(np.abs(dense) > ZERO_TOL))
    if total == 0:
        return 0.0
    return 100.0 * (total - nonzero) / total


@dataclass(frozen=True, eq=False)
class SplitMask:
    """Disjoint train/validation/test node masks."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        masks = [np.asarray(m, dtype=bool) for m in (self.train, self.val, self.test)]
        if len({m.shape for m in masks}) != 1 or masks[0].ndim != 1:
            raise InvalidGraphError("split masks must be 1-D and of equal length")
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(
            masks[1] & masks[2]
        ):
            raise InvalidGraphError("split masks must be pairwise disjoint")
        if not masks[0].any():
            raise InvalidGraphError("the training mask must not be empty")
        for name, mask in zip(("train", "val", "test"), masks):
            object.__setattr__(self, name, mask)

    @property
    def n_nodes(self) -> int:
        return len(self.train)

    def mask(self, name: SplitName | str) -> np.ndarray:
        return getattr(self, SplitName(name).value)

    def sizes(self) -> tuple[int, int, int]:
        return (int(self.train.sum()), int(self.val.sum()), int(self.test.sum()))


def _stratified_order(n: int, labels: np.ndarray | None, rng: np.random.Generator) -> np.ndarray:
    """Node order that interleaves classes in proportion to their sizes."""
    if labels is None:
        return rng.permutation(n)
    keys = np.empty(n)
    for label in np.unique(labels):
        members = np.nonzero(labels == label)[0]
        shuffled = rng.permutation(members)
        keys[shuffled] = (np.arange(len(members)) + rng.random(len(members))) / len(members)
    return np.argsort(keys, kind="stable")


def split(
    n: int,
    fractions: tuple[float, float, float] = (0.1, 0.45, 0.45),
    labels=None,
    per_class: int | None = None,
    seed: int | None = None,
) -> SplitMask:
    """Random train/val/test split, stratified by label when labels are given.

    With `per_class`, the training set takes that many nodes from every class and
    the validation and test sizes still follow fractions[1] and fractions[2].
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidGraphError(f"fractions must be three nonnegative numbers, got {fractions}")
    if sum(fractions) > 1.0 + 1e-9:
        raise InvalidGraphError(f"fractions sum to more than 1: {fractions}")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ShapeMismatchError(f"expected {n} labels, got shape {labels.shape}")

    rng = np.random.default_rng(seed)
    train = np.zeros(n, dtype=bool)
    if per_class is not None:
        if labels is None:
            raise InvalidGraphError("a per-class split needs labels")
        for label in np.unique(labels):
            members = np.nonzero(labels == label)[0]
            if len(members) < per_class:
                raise InvalidGraphError(
                    f"class {label} has {len(members)} nodes, fewer than {per_class}"
                )
            train[rng.choice(members, size=per_class, replace=False)] = True
        order = _stratified_order(n, labels, rng)
        order = order[~train[order]]
    else:
        order = _stratified_order(n, labels, rng)
        n_train = int(round(fractions[0] * n))
        train[order[:n_train]] = True
        order = order[n_train:]

    n_val = min(int(round(fractions[1] * n)), len(order))
    n_test = min(int(round(fractions[2] * n)), len(order) - n_val)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[order[:n_val]] = True
    test[order[n_val:n_val + n_test]] = True
    return SplitMask(train=train, val=val, test=test)
