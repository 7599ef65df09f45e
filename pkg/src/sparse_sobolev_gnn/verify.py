"""Executable property suites for the norm, spectral, stability and training code.

Each suite draws its random instances from a seed and returns one
PropertyResult per property, carrying the worst value it measured.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import log_softmax

from .graphgen import (
    Graph,
    WeightDistribution,
    erdos_renyi,
    graph_from_edges,
    knn_graph,
    perturb,
    sparsity_percentage,
)
from .models import Activation, Baseline, FusionMode, ModelConfig, PropertyResult
from .neural.layers import gcn_layer
from .neural.network import Network, named_gradients
from .sobolev import (
    build_shift_bank,
    gcn_operator,
    sobolev_term,
    sparse_sobolev_norm,
    verify_hadamard_spectrum,
)
from .sparse_core import add_scaled_identity, condition_number, eig_sym, hadamard_power
from .stability import (
    SweepProtocol,
    output_stability_bound,
    perturbation_distance_bound,
    sample_instance,
    sobolev_term_pair,
    stability_sweep,
    sweep_findings,
    zhan_check,
)

logger = logging.getLogger(__name__)

SPECTRUM_TOL = 1e-9
TRIANGLE_SLACK = 1e-9
HOMOGENEITY_RTOL = 1e-12
SEMINORM_TOL = 1e-12
CONDITION_RTOL = 1e-8
EQUIVALENCE_TOL = 1e-12
GRADIENT_RTOL = 1e-4
FD_STEP = 1e-5
ELEMENTWISE_RTOL = 1e-12
PERTURBED_TERM_RTOL = 1e-10


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**32))


def _random_graph(rng: np.random.Generator, n: int, p: float = 0.5) -> Graph:
    return erdos_renyi(n, p, weight_dist=WeightDistribution.UNIFORM, seed=_seed(rng))


def _connected_unit_graph(rng: np.random.Generator, n: int) -> Graph:
    """Path 0-1-...-(n-1) plus random unit-weight chords."""
    edges = {(i, i + 1) for i in range(n - 1)}
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < 0.3:
                edges.add((i, j))
    return graph_from_edges(n, sorted(edges))


def _result(suite, name, passed, measured, threshold, detail="") -> PropertyResult:
    result = PropertyResult(suite, name, bool(passed), float(measured), float(threshold), detail)
    log = logger.info if result.passed else logger.warning
    log(f"[{suite}] {name}: {'pass' if result.passed else 'FAIL'} (measured {measured:.3e})")
    return result


def norm_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Norm axioms of the sparse Sobolev norm, plus the semi-norm case eps = 0, rho = 1."""
    trials = 100 if quick else 1000
    worst_triangle = -np.inf
    worst_homogeneity = 0.0
    smallest_norm = np.inf
    for _ in range(trials):
        graph = _random_graph(rng, int(rng.integers(3, 11)))
        laplacian = graph.laplacian()
        epsilon = float(rng.choice([0.5, 1.0, 2.0]))
        rho = int(rng.integers(1, 5))
        x = rng.standard_normal(graph.n_nodes)
        y = rng.standard_normal(graph.n_nodes)
        s = float(rng.standard_normal() * 3)

        norm_x = sparse_sobolev_norm(x, laplacian, epsilon, rho)
        norm_y = sparse_sobolev_norm(y, laplacian, epsilon, rho)
        norm_sum = sparse_sobolev_norm(x + y, laplacian, epsilon, rho)
        worst_triangle = max(worst_triangle, norm_sum - norm_x - norm_y)
        scaled = sparse_sobolev_norm(s * x, laplacian, epsilon, rho)
        worst_homogeneity = max(worst_homogeneity, abs(scaled - abs(s) * norm_x) / norm_x)
        smallest_norm = min(smallest_norm, norm_x)

    worst_constant = 0.0
    for _ in range(trials // 10):
        graph = _connected_unit_graph(rng, int(rng.integers(3, 11)))
        constant = np.full(graph.n_nodes, float(rng.integers(1, 10)))
        worst_constant = max(
            worst_constant, sparse_sobolev_norm(constant, graph.laplacian(), 0.0, 1)
        )

    return [
        _result("norm", "triangle_inequality", worst_triangle <= TRIANGLE_SLACK,
                worst_triangle, TRIANGLE_SLACK),
        _result("norm", "absolute_homogeneity", worst_homogeneity <= HOMOGENEITY_RTOL,
                worst_homogeneity, HOMOGENEITY_RTOL),
        _result("norm", "positive_definiteness", smallest_norm > 0, smallest_norm, 0.0),
        _result("norm", "seminorm_constant_zero", worst_constant < SEMINORM_TOL,
                worst_constant, SEMINORM_TOL, "eps=0, rho=1, connected unit-weight graphs"),
    ]


def spectrum_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Kronecker reconstruction of Hadamard powers of random Laplacians."""
    worst = 0.0
    for _ in range(10 if quick else 50):
        graph = _random_graph(rng, int(rng.integers(3, 9)))
        rho = int(rng.choice([2, 3]))
        worst = max(worst, verify_hadamard_spectrum(graph.laplacian(), rho))
    return [
        _result("spectrum", "kronecker_reconstruction", worst < SPECTRUM_TOL, worst, SPECTRUM_TOL)
    ]


def sparsity_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Hadamard powers keep the pattern of A + eps*I; dense powers fill in."""
    graphs = [_random_graph(rng, int(rng.integers(5, 30)), 0.2) for _ in range(5 if quick else 20)]
    graphs.append(knn_graph(rng.standard_normal((40, 3)), k=5))
    mismatches = 0
    for graph in graphs:
        epsilon = float(rng.choice([0.5, 1.0, 2.0]))
        shifted = add_scaled_identity(graph.adjacency, epsilon)
        for rho in range(1, 7):
            if not sobolev_term(graph.adjacency, epsilon, rho).same_pattern(shifted):
                mismatches += 1

    path = graph_from_edges(3, [(0, 1), (1, 2)])
    dense = sparsity_percentage(sobolev_term(path.laplacian(), 1.0, 2, sparse=False))
    sparse = sparsity_percentage(sobolev_term(path.laplacian(), 1.0, 2, sparse=True))
    return [
        _result("sparsity", "pattern_preserved", mismatches == 0, mismatches, 0),
        _result("sparsity", "path3_dense_fills_in", dense < sparse, dense - sparse, 0.0,
                f"dense {dense:.2f}% vs sparse {sparse:.2f}% zeros"),
    ]


def condition_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """condition_number against an independent LAPACK eigenvalue oracle."""
    worst = 0.0
    for _ in range(20 if quick else 100):
        graph = _random_graph(rng, int(rng.integers(2, 21 if quick else 51)), 0.3)
        laplacian = graph.laplacian()
        lambda_max = max(float(np.linalg.eigvalsh(laplacian.to_dense())[-1]), 0.0)
        for epsilon in (0.5, 1.0, 2.0):
            expected = (lambda_max + epsilon) / epsilon
            measured = condition_number(laplacian, epsilon)
            worst = max(worst, abs(measured - expected) / expected)
    return [_result("condition", "shifted_condition_number", worst < CONDITION_RTOL, worst,
                    CONDITION_RTOL)]


def equivalence_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Single-branch S2-GNN with eps = 1 against the GCN baseline, same weights."""
    graph = _random_graph(rng, 30, 0.15)
    features = rng.standard_normal((graph.n_nodes, 6))
    s2gnn = ModelConfig(alpha=1, epsilon=1.0, fusion=FusionMode.NONE, hidden_units=[8, 3])
    gcn = ModelConfig(alpha=1, epsilon=1.0, baseline=Baseline.GCN, hidden_units=[8, 3])
    operator = gcn_operator(graph)
    worst_network = 0.0
    worst_layers = 0.0
    for _ in range(5 if quick else 20):
        s2_net = Network(replace(s2gnn, seed=_seed(rng)), graph, features.shape[1])
        gcn_net = Network(gcn, graph, features.shape[1], params=s2_net.snapshot())
        out_s2 = s2_net.forward(features)
        out_gcn = gcn_net.forward(features)
        worst_network = max(worst_network, float(np.max(np.abs(out_s2 - out_gcn))))

        hidden = features
        for depth, layer in enumerate(s2_net.params):
            last = depth == s2_net.n_layers - 1
            hidden = gcn_layer(
                operator, hidden, layer.branch_weights[0], layer.branch_biases[0],
                activation=Activation.IDENTITY if last else Activation.RELU,
            )
        composed = log_softmax(hidden, axis=1)
        worst_layers = max(worst_layers, float(np.max(np.abs(out_s2 - composed))))
    return [
        _result("equivalence", "s2gnn_matches_gcn_network", worst_network < EQUIVALENCE_TOL,
                worst_network, EQUIVALENCE_TOL),
        _result("equivalence", "s2gnn_matches_gcn_layer_chain", worst_layers < EQUIVALENCE_TOL,
                worst_layers, EQUIVALENCE_TOL),
    ]


@dataclass
class GradientCheck:
    """Per-tensor relative error of analytic against central-difference gradients."""

    errors: dict[str, float]
    skipped: int  # coordinates whose finite-difference step crossed a ReLU kink

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def _same_pattern(left: list[np.ndarray], right: list[np.ndarray]) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(left, right))


def gradient_check(network: Network, features, labels, mask, h: float = FD_STEP) -> GradientCheck:
    """Compare backward() with central differences of loss() in every coordinate."""
    network.forward(features)
    base_pattern = network.activation_pattern()
    analytic = named_gradients(network.backward(labels, mask))

    errors = {}
    skipped = 0
    for name, tensor in network.named_parameters().items():
        numeric = np.zeros_like(tensor)
        valid = np.ones(tensor.shape, dtype=bool)
        for idx in np.ndindex(tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + h
            network.forward(features)
            loss_plus = network.loss(labels, mask)
            pattern_plus = network.activation_pattern()
            tensor[idx] = original - h
            network.forward(features)
            loss_minus = network.loss(labels, mask)
            pattern_minus = network.activation_pattern()
            tensor[idx] = original
            if not (_same_pattern(base_pattern, pattern_plus)
                    and _same_pattern(base_pattern, pattern_minus)):
                valid[idx] = False
                skipped += 1
                continue
            numeric[idx] = (loss_plus - loss_minus) / (2 * h)
        if not valid.any():
            errors[name] = 0.0
            continue
        scale = max(float(np.max(np.abs(numeric[valid]))), 1e-8)
        errors[name] = float(np.max(np.abs(analytic[name] - numeric)[valid])) / scale
    network.forward(features)
    return GradientCheck(errors=errors, skipped=skipped)


def gradients_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Central differences on a 12-node graph for both fusion modes, dropout off."""
    graph = _random_graph(rng, 12, 0.3)
    features = rng.standard_normal((12, 4))
    labels = rng.integers(0, 3, size=12)
    mask = np.zeros(12, dtype=bool)
    mask[rng.permutation(12)[:8]] = True
    results = []
    for fusion in (FusionMode.LINEAR, FusionMode.MLP):
        config = ModelConfig(
            alpha=2, epsilon=1.0, hidden_units=[5, 3], fusion=fusion, dropout=0.0,
            weight_decay=1e-2, seed=_seed(rng),
        )
        check = gradient_check(Network(config, graph, 4), features, labels, mask)
        results.append(_result(
            "gradients", f"finite_difference_{fusion.value}", check.max_error < GRADIENT_RTOL,
            check.max_error, GRADIENT_RTOL, f"{check.skipped} kink coordinate(s) skipped",
        ))
    return results


def bounds_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Elementwise structure of the Sobolev terms, the distance bound and Zhan's inequality."""
    trials = 20 if quick else 100
    worst_true = 0.0
    worst_perturbed = 0.0
    worst_distance = -np.inf
    worst_term_norm = -np.inf
    for _ in range(trials):
        graph = _random_graph(rng, int(rng.integers(3, 11)))
        if graph.n_edges == 0:
            continue
        perturbation = perturb(graph, float(rng.choice([5.0, 10.0, 20.0])), seed=_seed(rng))
        epsilon = float(rng.choice([0.5, 1.0, 5.0]))
        rho = int(rng.integers(1, 5))
        true_term, perturbed_term = sobolev_term_pair(graph, perturbation, epsilon, rho)
        direct = sobolev_term(graph.laplacian(), epsilon, rho).to_dense()
        worst_true = max(worst_true, _relative_gap(true_term, direct))
        noisy = graph.adjacency.to_scipy() + perturbation.noise.to_scipy()
        noisy_laplacian = np.diag(np.asarray(noisy.sum(axis=1)).ravel()) - noisy.toarray()
        noisy_direct = np.power(noisy_laplacian + epsilon * np.eye(graph.n_nodes), rho)
        worst_perturbed = max(worst_perturbed, _relative_gap(perturbed_term, noisy_direct))

        distance = perturbation_distance_bound(graph, perturbation, epsilon, rho)
        worst_distance = max(worst_distance, distance.lhs - distance.binomial_rhs)

    for seed in range(trials):
        inputs = sample_instance(10, 0.3, 0.5, 2, 10.0, _seed(rng) + seed)
        parts = output_stability_bound(inputs).components
        worst_term_norm = max(
            worst_term_norm, parts["norm_perturbed_term"] - parts["perturbed_term_bound"]
        )

    worst_zhan = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        left = rng.standard_normal((n, n))
        right = rng.standard_normal((n, n))
        lhs, rhs = zhan_check(left + left.T, right + right.T)
        worst_zhan = max(worst_zhan, lhs - rhs)

    slack = 1e-9
    return [
        _result("bounds", "elementwise_true_term", worst_true <= ELEMENTWISE_RTOL, worst_true,
                ELEMENTWISE_RTOL),
        _result("bounds", "elementwise_perturbed_term", worst_perturbed <= PERTURBED_TERM_RTOL,
                worst_perturbed, PERTURBED_TERM_RTOL),
        _result("bounds", "distance_below_binomial_bound", worst_distance <= slack,
                worst_distance, slack),
        _result("bounds", "perturbed_term_norm_bound", worst_term_norm <= slack,
                worst_term_norm, slack),
        _result("bounds", "zhan_inequality", worst_zhan <= slack, worst_zhan, slack),
    ]


def _relative_gap(left: np.ndarray, right: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(right))), 1.0)
    return float(np.max(np.abs(left - right))) / scale


def stability_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """The randomized stability protocol: exact bound, SNR trend, rho ordering."""
    protocol = SweepProtocol(n_seeds=10 if quick else 100, base_seed=_seed(rng) % 10**6)
    findings = sweep_findings(stability_sweep(protocol))
    return [
        _result("stability", "exact_bound_violations", findings.violations == 0,
                findings.violations, 0),
        _result("stability", "lhs_non_increasing_in_snr", not findings.non_monotonic,
                len(findings.non_monotonic), 0, str(findings.non_monotonic)),
        _result("stability", "rho3_at_least_rho2_low_snr", not findings.rho_order_failures,
                len(findings.rho_order_failures), 0, str(findings.rho_order_failures)),
    ]


def schur_suite(rng: np.random.Generator, quick: bool = False) -> list[PropertyResult]:
    """Positive definiteness of Hadamard powers and the spectral radius of shift banks."""
    smallest = np.inf
    largest_radius = 0.0
    for _ in range(10 if quick else 50):
        graph = _random_graph(rng, int(rng.integers(3, 51 if not quick else 21)), 0.2)
        epsilon = float(rng.choice([0.5, 1.0, 2.0]))
        rho = int(rng.integers(1, 5))
        term = hadamard_power(add_scaled_identity(graph.laplacian(), epsilon), rho)
        smallest = min(smallest, float(eig_sym(term).eigenvalues[0]))
        for operator in build_shift_bank(graph, epsilon, 3).operators:
            radius = float(np.max(np.abs(eig_sym(operator).eigenvalues)))
            largest_radius = max(largest_radius, radius)
    return [
        _result("schur", "hadamard_power_positive_definite", smallest > 0, smallest, 0.0),
        _result("schur", "bank_spectral_radius", largest_radius <= 1 + 1e-9, largest_radius,
                1 + 1e-9),
    ]


SUITES: dict[str, Callable[[np.random.Generator, bool], list[PropertyResult]]] = {
    "norm": norm_suite,
    "spectrum": spectrum_suite,
    "stability": stability_suite,
    "gradients": gradients_suite,
    "sparsity": sparsity_suite,
    "condition": condition_suite,
    "equivalence": equivalence_suite,
    "bounds": bounds_suite,
    "schur": schur_suite,
}


def run_suites(names: list[str], seed: int = 0, quick: bool = False) -> list[PropertyResult]:
    """Run the named suites ("all" expands to every suite) with a shared seed."""
    if "all" in names:
        names = list(SUITES)
    unknown = [name for name in names if name not in SUITES]
    if unknown or not names:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)} or 'all'")
    results = []
    for name in names:
        rng = np.random.default_rng(np.random.SeedSequence([seed, list(SUITES).index(name)]))
        results.extend(SUITES[name](rng, quick))
    return results
