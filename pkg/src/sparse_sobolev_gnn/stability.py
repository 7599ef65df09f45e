"""Output stability of the single-layer sparse Sobolev network under graph and weight noise.

The simplified network is Y = sigma((L + eps*I)^(rho) X W). Perturbing the
adjacency by E (an admissible edge-noise matrix) and the weights to W_hat gives
Y_hat; this module evaluates ||Y - Y_hat|| and the upper bounds on it, and runs
the randomized Erdos-Renyi protocol over SNR grids.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import NamedTuple

import numpy as np
from scipy.special import comb

from .exceptions import InvalidGraphError, ShapeMismatchError
from .graphgen import (
    Graph,
    Perturbation,
    erdos_renyi,
    perturb,
    perturb_weights,
    perturbed_graph,
)
from .models import Activation, BoundBreakdown, SweepCellResult
from .sobolev import sobolev_term
from .sparse_core import (
    SparseMatrix,
    as_dense,
    max_col_norm,
    max_row_norm,
    spectral_norm,
    spmm,
)

logger = logging.getLogger(__name__)

DEFAULT_SNRS = (5.0, 10.0, 20.0, 30.0, 40.0)
DEFAULT_RHOS = (2, 3)
DEFAULT_PS = (0.1, 0.3, 0.5)
DEFAULT_EPSILONS = (0.5, 5.0, 10.0)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _lipschitz_activation(activation) -> Activation:
    try:
        return Activation(activation)
    except ValueError:
        raise ValueError(
            f"activation {activation!r} is not a supported 1-Lipschitz function"
        ) from None


def ss2gnn_forward(
    laplacian: SparseMatrix,
    features,
    weights,
    epsilon: float,
    rho: int,
    activation: Activation = Activation.IDENTITY,
) -> np.ndarray:
    """sigma((L + eps*I)^(rho) X W)."""
    activation = _lipschitz_activation(activation)
    features = as_dense(features, "X")
    weights = as_dense(weights, "W")
    if features.shape[0] != laplacian.n_rows or features.shape[1] != weights.shape[0]:
        raise ShapeMismatchError(
            f"cannot chain {laplacian.shape} x {features.shape} x {weights.shape}"
        )
    term = sobolev_term(laplacian, epsilon, rho, sparse=True)
    return _activate(spmm(term, features) @ weights, activation)


def sobolev_term_pair(
    graph: Graph, perturbation: Perturbation, epsilon: float, rho: int
) -> tuple[np.ndarray, np.ndarray]:
    """(L + eps*I)^(rho) and its perturbed counterpart, built entry by entry.

    Off the diagonal the entries are (-1)^rho a_ij^rho and (-1)^rho (a_ij + e_ij)^rho;
    on it, (d_i + eps)^rho and (d_i + d_e_i + eps)^rho.
    """
    if not perturbation.admissible_for(graph):
        raise InvalidGraphError("perturbation is not admissible for this graph")
    sign = -1.0 if rho % 2 else 1.0
    adjacency = graph.adjacency.to_dense()
    noisy = adjacency + perturbation.noise.to_dense()
    degrees = graph.degrees()
    noisy_degrees = degrees + perturbation.degrees()

    true_term = sign * np.power(adjacency, rho)
    perturbed_term = sign * np.power(noisy, rho)
    np.fill_diagonal(true_term, np.power(degrees + epsilon, rho))
    np.fill_diagonal(perturbed_term, np.power(noisy_degrees + epsilon, rho))
    return true_term, perturbed_term


class DistanceBound(NamedTuple):
    """||L^(rho) - L_hat^(rho)|| and its two upper bounds."""

    lhs: float
    binomial_rhs: float
    first_order_rhs: float
    eta: tuple[float, ...]  # eta_1..eta_rho
    noise_norms: tuple[float, ...]  # ||E^(m)|| for m = 1..rho


def _support(adjacency: np.ndarray) -> np.ndarray:
    return (adjacency != 0).astype(np.float64)


def _hadamard_eta(adjacency: np.ndarray, power: int) -> float:
    """min(r_1, c_1) of A^(power); A^(0) is the indicator of the edge set."""
    base = _support(adjacency) if power == 0 else np.power(adjacency, power)
    return min(max_row_norm(base), max_col_norm(base))


def perturbation_distance_bound(
    graph: Graph, perturbation: Perturbation, epsilon: float, rho: int
) -> DistanceBound:
    """Exact spectral distance between the true and perturbed Sobolev terms and its bounds.

    binomial_rhs = sum_m C(rho, m) (eta_m ||E^(m)|| + (d_max + eps)^(rho-m) d_e_max^m),
    first_order_rhs keeps the m = 1 term only.
    """
    true_term, perturbed_term = sobolev_term_pair(graph, perturbation, epsilon, rho)
    lhs = spectral_norm(true_term - perturbed_term)

    adjacency = graph.adjacency.to_dense()
    noise = perturbation.noise.to_dense()
    degrees = graph.degrees()
    d_max = float(degrees.max()) if degrees.size else 0.0
    de_max = float(np.max(np.abs(perturbation.degrees()))) if degrees.size else 0.0

    eta = []
    noise_norms = []
    terms = []
    for m in range(1, rho + 1):
        eta_m = _hadamard_eta(adjacency, rho - m)
        noise_norm = spectral_norm(np.power(noise, m))
        eta.append(eta_m)
        noise_norms.append(noise_norm)
        terms.append(
            float(comb(rho, m, exact=True))
            * (eta_m * noise_norm + (d_max + epsilon) ** (rho - m) * de_max**m)
        )
    first_order = rho * (eta[0] * noise_norms[0] + (d_max + epsilon) ** (rho - 1) * de_max)
    return DistanceBound(
        lhs=lhs,
        binomial_rhs=float(sum(terms)),
        first_order_rhs=float(first_order),
        eta=tuple(eta),
        noise_norms=tuple(noise_norms),
    )


@dataclass(frozen=True, eq=False)
class StabilityInputs:
    """One instance of the stability experiment.

    Attributes:
        graph: Unperturbed graph.
        perturbation: Admissible edge noise E.
        weights: W, F0 x F1.
        weights_hat: Perturbed weights W_hat.
        features: X, N x F0, ideally with unit-norm columns so ||X||_F^2 = F0.
        epsilon: Shift eps.
        rho: Hadamard power.
        activation: Identity or ReLU.
        lipschitz: Lipschitz constant phi of the activation.
    """

    graph: Graph
    perturbation: Perturbation
    weights: np.ndarray
    weights_hat: np.ndarray
    features: np.ndarray
    epsilon: float
    rho: int
    activation: Activation = Activation.IDENTITY
    lipschitz: float = 1.0

    def __post_init__(self):
        features = as_dense(self.features, "X")
        weights = as_dense(self.weights, "W")
        weights_hat = as_dense(self.weights_hat, "W_hat")
        if features.shape[0] != self.graph.n_nodes:
            raise ShapeMismatchError(
                f"X has {features.shape[0]} rows for {self.graph.n_nodes} nodes"
            )
        if weights.shape != weights_hat.shape or weights.shape[0] != features.shape[1]:
            raise ShapeMismatchError(
                f"X {features.shape}, W {weights.shape} and W_hat {weights_hat.shape} do not chain"
            )
        if not self.perturbation.admissible_for(self.graph):
            raise InvalidGraphError("perturbation is not admissible for this graph")
        if self.rho < 1 or self.epsilon < 0:
            raise ValueError(f"need rho >= 1 and eps >= 0, got rho={self.rho}, eps={self.epsilon}")
        if not self.lipschitz >= 0:
            raise ValueError(f"Lipschitz constant must be nonnegative, got {self.lipschitz}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "weights_hat", weights_hat)
        object.__setattr__(self, "activation", _lipschitz_activation(self.activation))

    @property
    def upsilon(self) -> float:
        """upsilon with ||X||_F = sqrt(upsilon)."""
        return float(np.sum(self.features**2))


def output_stability_bound(inputs: StabilityInputs) -> BoundBreakdown:
    """||Y - Y_hat|| (spectral norm) against the first-order and exact bounds.

    For ReLU the exact bound carries an extra sqrt(min(N, F1)) factor so that the
    elementwise Lipschitz step also holds in the spectral norm.
    """
    graph = inputs.graph
    noisy_graph = perturbed_graph(graph, inputs.perturbation)
    y = ss2gnn_forward(
        graph.laplacian(), inputs.features, inputs.weights, inputs.epsilon, inputs.rho,
        inputs.activation,
    )
    y_hat = ss2gnn_forward(
        noisy_graph.laplacian(), inputs.features, inputs.weights_hat, inputs.epsilon,
        inputs.rho, inputs.activation,
    )
    lhs = spectral_norm(y - y_hat)

    rho = inputs.rho
    epsilon = inputs.epsilon
    distance = perturbation_distance_bound(graph, inputs.perturbation, epsilon, rho)
    degrees = graph.degrees()
    d_max = float(degrees.max())
    de_max = float(np.max(np.abs(inputs.perturbation.degrees())))
    d_hat_max = d_max + de_max

    noisy_adjacency = noisy_graph.adjacency.to_dense()
    noisy_hadamard_norm = spectral_norm(np.power(noisy_adjacency, rho))
    perturbed_term_bound = (d_hat_max + epsilon) ** rho + noisy_hadamard_norm
    _, perturbed_term = sobolev_term_pair(graph, inputs.perturbation, epsilon, rho)

    sqrt_upsilon = math.sqrt(inputs.upsilon)
    delta_w = spectral_norm(inputs.weights - inputs.weights_hat)
    weight_norm = spectral_norm(inputs.weights)
    phi = inputs.lipschitz
    relu_factor = 1.0
    if inputs.activation == Activation.RELU:
        relu_factor = math.sqrt(min(graph.n_nodes, inputs.weights.shape[1]))

    weight_term = sqrt_upsilon * perturbed_term_bound * delta_w
    structure_first_order = sqrt_upsilon * distance.first_order_rhs * weight_norm
    structure_exact = sqrt_upsilon * distance.binomial_rhs * weight_norm

    components = {
        "weight_term": weight_term,
        "structure_term_first_order": structure_first_order,
        "structure_term_exact": structure_exact,
        "delta_w": delta_w,
        "norm_w": weight_norm,
        "upsilon": inputs.upsilon,
        "d_max": d_max,
        "de_max": de_max,
        "d_hat_max": d_hat_max,
        "norm_e": distance.noise_norms[0],
        "term_distance": distance.lhs,
        "norm_perturbed_term": spectral_norm(perturbed_term),
        "perturbed_term_bound": perturbed_term_bound,
        "relu_factor": relu_factor,
        "lipschitz": phi,
    }
    for m, (eta_m, noise_norm) in enumerate(zip(distance.eta, distance.noise_norms), start=1):
        components[f"eta_{m}"] = eta_m
        components[f"norm_e_hadamard_{m}"] = noise_norm
        components[f"binomial_term_{m}"] = float(comb(rho, m, exact=True)) * (
            eta_m * noise_norm + (d_max + epsilon) ** (rho - m) * de_max**m
        )

    return BoundBreakdown(
        lhs=lhs,
        rhs_first_order=phi * (weight_term + structure_first_order),
        rhs_exact_binomial=phi * relu_factor * (weight_term + structure_exact),
        components=components,
    )


def zhan_check(left, right) -> tuple[float, float]:
    """(||A1 o A2||, min(c_1(A1), r_1(A1)) ||A2||)."""
    left = as_dense(left, "A1")
    right = as_dense(right, "A2")
    if left.shape != right.shape:
        raise ShapeMismatchError(f"Hadamard product of {left.shape} and {right.shape}")
    lhs = spectral_norm(left * right)
    rhs = min(max_col_norm(left), max_row_norm(left)) * spectral_norm(right)
    return lhs, rhs


def sample_instance(
    n: int,
    p: float,
    epsilon: float,
    rho: int,
    snr_db: float,
    seed: int,
    f0: int = 16,
    f1: int = 2,
    activation: Activation = Activation.IDENTITY,
) -> StabilityInputs:
    """Random ER instance with column-normalized X and standard normal W.

    Graph, X, W and the noise directions depend only on the seed, so instances
    that differ only in SNR, rho or eps are matched.
    """
    graph_seed, feature_seed, edge_seed, weight_seed = np.random.SeedSequence(seed).spawn(4)
    graph = erdos_renyi(n, p, seed=graph_seed)
    rng = np.random.default_rng(feature_seed)
    features = rng.standard_normal((n, f0))
    features /= np.linalg.norm(features, axis=0, keepdims=True)
    weights = rng.standard_normal((f0, f1))

    if graph.n_edges:
        perturbation = perturb(graph, snr_db, seed=edge_seed)
    else:
        empty = SparseMatrix.from_coo([], [], [], shape=(n, n))
        perturbation = Perturbation(noise=empty, snr_db=snr_db, achieved_snr_db=math.inf)
    return StabilityInputs(
        graph=graph,
        perturbation=perturbation,
        weights=weights,
        weights_hat=perturb_weights(weights, snr_db, seed=weight_seed),
        features=features,
        epsilon=epsilon,
        rho=rho,
        activation=activation,
    )


class SweepScenario(str, Enum):
    """Which cells of the protocol to run."""

    GRID = "grid"  # full rho x p x eps product
    RHO = "rho"  # rho in {2, 3} at p = 0.3, eps = 0.5
    P_ER = "p_er"  # p in {0.1, 0.3, 0.5} at rho = 2, eps = 0.5
    EPSILON = "epsilon"  # eps in {0.5, 5, 10} at rho = 2, p = 0.3


@dataclass
class SweepProtocol:
    """Parameters of a stability sweep."""

    scenario: SweepScenario = SweepScenario.GRID
    n_nodes: int = 10
    f0: int = 16
    f1: int = 2
    n_seeds: int = 100
    base_seed: int = 0
    snrs: tuple[float, ...] = DEFAULT_SNRS
    rhos: tuple[int, ...] = DEFAULT_RHOS
    ps: tuple[float, ...] = DEFAULT_PS
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.scenario = SweepScenario(self.scenario)
        self.activation = _lipschitz_activation(self.activation)

    def families(self) -> list[tuple[int, float, float]]:
        """(rho, p, eps) combinations; every family is swept over all SNRs."""
        if self.scenario == SweepScenario.RHO:
            return [(rho, 0.3, 0.5) for rho in self.rhos]
        if self.scenario == SweepScenario.P_ER:
            return [(2, p, 0.5) for p in self.ps]
        if self.scenario == SweepScenario.EPSILON:
            return [(2, 0.3, eps) for eps in self.epsilons]
        return list(product(self.rhos, self.ps, self.epsilons))

    def cells(self) -> list[tuple[int, float, float, float]]:
        return [(*family, snr) for family in self.families() for snr in self.snrs]


def run_cell(protocol: SweepProtocol, rho: int, p: float, epsilon: float, snr_db: float):
    """Aggregate output_stability_bound over the protocol's seeds for one cell."""
    lhs = []
    rhs_fo = []
    rhs_exact = []
    achieved = []
    violations = 0
    for offset in range(protocol.n_seeds):
        inputs = sample_instance(
            protocol.n_nodes, p, epsilon, rho, snr_db, protocol.base_seed + offset,
            f0=protocol.f0, f1=protocol.f1, activation=protocol.activation,
        )
        bound = output_stability_bound(inputs)
        lhs.append(bound.lhs)
        rhs_fo.append(bound.rhs_first_order)
        rhs_exact.append(bound.rhs_exact_binomial)
        achieved.append(inputs.perturbation.achieved_snr_db)
        if not bound.holds:
            violations += 1
            logger.warning(
                f"bound violated: rho={rho} p={p} eps={epsilon} snr={snr_db} "
                f"seed={protocol.base_seed + offset}: {bound.lhs} > {bound.rhs_exact_binomial}"
            )
    finite = [a for a in achieved if math.isfinite(a)]
    return SweepCellResult(
        rho=rho,
        p_er=p,
        epsilon=epsilon,
        snr_db=snr_db,
        mean_lhs=float(np.mean(lhs)),
        std_lhs=float(np.std(lhs)),
        mean_rhs_fo=float(np.mean(rhs_fo)),
        mean_rhs_exact=float(np.mean(rhs_exact)),
        violations=violations,
        n_seeds=protocol.n_seeds,
        mean_achieved_snr_db=float(np.mean(finite)) if finite else math.inf,
    )


def _run_cell_args(args) -> SweepCellResult:
    return run_cell(*args)


def stability_sweep(
    protocol: SweepProtocol | None = None, workers: int = 1
) -> list[SweepCellResult]:
    """Run every cell of the protocol; results come back in cell order."""
    protocol = protocol or SweepProtocol()
    cells = protocol.cells()
    logger.info(
        f"Stability sweep ({protocol.scenario.value}): {len(cells)} cells x "
        f"{protocol.n_seeds} seeds, {workers} worker(s)"
    )
    jobs = [(protocol, *cell) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = []
        for job in jobs:
            result = run_cell(*job)
            logger.info(
                f"cell rho={result.rho} p={result.p_er} eps={result.epsilon} "
                f"snr={result.snr_db}: mean lhs {result.mean_lhs:.4g}, "
                f"mean exact rhs {result.mean_rhs_exact:.4g}"
            )
            results.append(result)
    return results


@dataclass
class SweepFindings:
    """Self-checks over a finished sweep."""

    violations: int
    non_monotonic: list[tuple[int, float, float]]  # families whose mean lhs rises with SNR
    rho_order_failures: list[tuple[float, float]]  # (p, eps) where rho=3 < rho=2 at lowest SNR

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "violations": self.violations,
            "non_monotonic": [list(f) for f in self.non_monotonic],
            "rho_order_failures": [list(f) for f in self.rho_order_failures],
        }


def sweep_findings(results: list[SweepCellResult]) -> SweepFindings:
    families: dict[tuple[int, float, float], list[SweepCellResult]] = {}
    for cell in results:
        families.setdefault((cell.rho, cell.p_er, cell.epsilon), []).append(cell)

    non_monotonic = []
    for key, cells in families.items():
        means = [c.mean_lhs for c in sorted(cells, key=lambda c: c.snr_db)]
        if any(later > earlier for earlier, later in zip(means, means[1:])):
            non_monotonic.append(key)

    rho_order_failures = []
    lowest = {key: min(cells, key=lambda c: c.snr_db) for key, cells in families.items()}
    for (rho, p, eps), cell in lowest.items():
        if rho != 3 or (2, p, eps) not in lowest:
            continue
        if cell.mean_lhs < lowest[(2, p, eps)].mean_lhs:
            rho_order_failures.append((p, eps))

    return SweepFindings(
        violations=sum(c.violations for c in results),
        non_monotonic=non_monotonic,
        rho_order_failures=rho_order_failures,
    )
