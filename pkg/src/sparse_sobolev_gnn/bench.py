"""Forward-pass time and memory of S2-GNN and GCN on Erdos-Renyi graphs."""

import logging
import statistics
import time
import tracemalloc
from dataclasses import dataclass, replace

import numpy as np
import psutil

from .graphgen import erdos_renyi
from .models import Baseline, BenchCellResult, ModelConfig
from .neural.network import Network

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (500, 1000, 5000, 10000)
DEFAULT_PS = (0.03, 0.04, 0.05, 0.06)
DEFAULT_FEATURES = 16
DEFAULT_REPEATS = 30
MB = 2**20


@dataclass
class BenchGrid:
    """Grid of graph sizes and edge probabilities, and the models timed on each."""

    sizes: tuple[int, ...] = DEFAULT_SIZES
    ps: tuple[float, ...] = DEFAULT_PS
    alpha: int = 3
    epsilon: float = 1.0
    n_features: int = DEFAULT_FEATURES
    hidden_units: tuple[int, ...] = (16, 2)
    repeats: int = DEFAULT_REPEATS
    seed: int = 0
    models: tuple[str, ...] = (Baseline.S2GNN.value, Baseline.GCN.value)

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")
        self.models = tuple(Baseline(model).value for model in self.models)

    def model_config(self, model: str) -> ModelConfig:
        return ModelConfig(
            alpha=self.alpha,
            epsilon=self.epsilon,
            n_layers=len(self.hidden_units),
            hidden_units=list(self.hidden_units),
            baseline=model,
            seed=self.seed,
        )


def time_forward(network: Network, features: np.ndarray, repeats: int) -> list[float]:
    """Wall time of `repeats` inference passes, after one untimed warm-up."""
    network.forward(features)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        network.forward(features)
        times.append(time.perf_counter() - start)
    return times


def peak_forward_memory(network: Network, features: np.ndarray) -> float:
    """Allocator high-water mark (MB) of one inference pass."""
    tracemalloc.start()
    try:
        network.forward(features)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak / MB


def bench_cell(grid: BenchGrid, model: str, n_nodes: int, p: float) -> BenchCellResult:
    """Build the graph and model for one cell, then time and measure its forward pass."""
    config = grid.model_config(model)
    result = BenchCellResult(
        model=model, n_nodes=n_nodes, p_er=p, alpha=config.alpha, repeats=grid.repeats
    )
    try:
        graph = erdos_renyi(n_nodes, p, seed=grid.seed)
        features = np.random.default_rng(grid.seed).standard_normal((n_nodes, grid.n_features))
        network = Network(config, graph, grid.n_features)
        times = time_forward(network, features, grid.repeats)
        peak = peak_forward_memory(network, features)
    except MemoryError:
        logger.warning(f"allocation failed for {model} at N={n_nodes}, p={p}; skipping cell")
        return replace(result, status="alloc_failed")

    return replace(
        result,
        mean_time_s=float(np.mean(times)),
        median_time_s=float(statistics.median(times)),
        peak_mem_mb=peak,
        rss_mb=psutil.Process().memory_info().rss / MB,
        stored_entries=network.stored_entries(),
    )


def run_bench(grid: BenchGrid | None = None) -> list[BenchCellResult]:
    """Every (model, N, p) cell of the grid; failed allocations are reported, not raised."""
    grid = grid or BenchGrid()
    results = []
    for n_nodes in grid.sizes:
        for p in grid.ps:
            for model in grid.models:
                result = bench_cell(grid, model, n_nodes, p)
                logger.info(
                    f"bench {model} N={n_nodes} p={p}: median {result.median_time_s:.4g}s, "
                    f"peak {result.peak_mem_mb:.1f} MB ({result.status})"
                )
                results.append(result)
    return results


def monotonic_failures(results: list[BenchCellResult], model: str = "s2gnn") -> list[float]:
    """Edge probabilities at which the median forward time decreases as N grows."""
    by_p: dict[float, list[BenchCellResult]] = {}
    for cell in results:
        if cell.model == model and cell.status == "ok":
            by_p.setdefault(cell.p_er, []).append(cell)
    failures = []
    for p, cells in by_p.items():
        medians = [c.median_time_s for c in sorted(cells, key=lambda c: c.n_nodes)]
        if any(later < earlier for earlier, later in zip(medians, medians[1:])):
            failures.append(p)
    return failures
