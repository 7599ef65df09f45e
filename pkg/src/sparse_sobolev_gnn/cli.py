"""Command-line entry point: `s2gnn <command> [options]`.

Every command resolves its parameters from flags, an optional key-value
config file and built-in defaults (in that order of precedence), echoes
the result to <out>/manifest.txt and writes its tables there. Exit codes:
0 success, 1 failed check or bound violation, 2 usage or input error.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bench import BenchGrid, monotonic_failures, run_bench
from .config import coerce, load_config_file, resolve
from .exceptions import S2GNNError
from .graphgen import (
    Graph,
    SplitMask,
    WeightDistribution,
    erdos_renyi,
    homophily_index,
    knn_graph,
    sbm,
    sbm_features,
    sparsity_percentage,
    split,
)
from .models import (
    BENCH_HEADER,
    SENSITIVITY_HEADER,
    SWEEP_HEADER,
    Baseline,
    ModelConfig,
    RunConfig,
)
from .neural import epsilon_sensitivity, fit
from .sobolev import curve_gaps, eigen_penalization_curves, sobolev_term
from .stability import SweepProtocol, stability_sweep, sweep_findings
from .store import (
    LOG_NAME,
    RunStore,
    read_edge_list,
    read_features,
    read_labels,
    read_masks,
    save_checkpoint,
    write_edge_list,
    write_features,
    write_labels,
    write_masks,
)
from .verify import run_suites

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

# ModelConfig keys exposed as flags; seed is global and n_layers follows hidden_units
MODEL_KEYS = [key for key in ModelConfig().to_dict() if key not in ("seed", "n_layers")]
MODEL_DEFAULTS = {
    key: value for key, value in ModelConfig().to_dict().items() if key in MODEL_KEYS
}
SPLIT_DEFAULTS = {"fractions": [0.1, 0.45, 0.45], "per_class": None}


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[[dict, RunStore], int]
    defaults: dict = field(default_factory=dict)


def _model_config(params: dict, seed: int) -> ModelConfig:
    values = {key: params[key] for key in MODEL_KEYS}
    config = ModelConfig(**values, n_layers=len(params["hidden_units"]), seed=seed)
    config.validate()
    return config


def _load_graph(params: dict) -> Graph:
    if not params.get("graph"):
        raise ValueError("--graph is required")
    graph = read_edge_list(params["graph"])
    logger.info(f"Loaded graph {params['graph']}: {graph.n_nodes} nodes, {graph.n_edges} edges")
    return graph


def _load_features(params: dict, n_nodes: int) -> np.ndarray:
    """Features from --features, or one-hot node identities when none are given."""
    if not params.get("features"):
        return np.eye(n_nodes)
    features = read_features(params["features"])
    if features.shape[0] != n_nodes:
        raise ValueError(
            f"{params['features']} has {features.shape[0]} rows for a {n_nodes}-node graph"
        )
    return features


def _load_labels(params: dict, n_nodes: int) -> np.ndarray:
    if not params.get("labels"):
        raise ValueError("--labels is required")
    return read_labels(params["labels"], n_nodes)


def _load_splits(params: dict, labels: np.ndarray, seed: int) -> SplitMask:
    if params.get("masks"):
        return read_masks(params["masks"], len(labels))
    labeled = labels >= 0
    if not labeled.all():
        raise ValueError("a generated split needs every node labeled; pass --masks instead")
    return split(
        len(labels), tuple(params["fractions"]), labels=labels,
        per_class=params["per_class"], seed=seed,
    )


def cmd_verify(params: dict, store: RunStore) -> int:
    results = run_suites(list(params["suite"]), seed=params["seed"], quick=params["quick"])
    passed = all(result.passed for result in results)
    store.write_json("verify.json", {
        "passed": passed,
        "properties": [result.to_dict() for result in results],
    })
    for result in results:
        status = "pass" if result.passed else "FAIL"
        print(f"{status}  {result.suite}.{result.name}  measured={result.measured:.3e}")
    return EXIT_OK if passed else EXIT_FAILED


def cmd_knn(params: dict, store: RunStore) -> int:
    if not params["features"]:
        raise ValueError("--features is required")
    bandwidth = params["kernel_bandwidth"]
    if bandwidth != "auto":
        bandwidth = float(bandwidth)
    graph = knn_graph(read_features(params["features"]), params["k"], kernel_bandwidth=bandwidth)
    target = write_edge_list(store.path(params["output"]), graph)
    weights = graph.adjacency.values
    low, high = (float(weights.min()), float(weights.max())) if weights.size else (0.0, 0.0)
    print(f"N={graph.n_nodes} |E|={graph.n_edges} weights=[{low:.6g}, {high:.6g}] -> {target}")
    return EXIT_OK


def cmd_generate(params: dict, store: RunStore) -> int:
    seed = params["seed"]
    n = params["n_nodes"]
    weights = WeightDistribution(params["weights"])
    if params["kind"] == "sbm":
        graph = sbm(n, params["blocks"], params["p_in"], params["p_out"], seed=seed,
                    weight_dist=weights)
        labels = graph.node_labels
    elif params["kind"] == "er":
        graph = erdos_renyi(n, params["p"], weight_dist=weights, seed=seed)
        labels = np.random.default_rng(seed).integers(0, params["blocks"], size=n)
    else:
        raise ValueError(f"unknown graph kind {params['kind']!r}; choose sbm or er")

    prefix = params["output"]
    write_edge_list(store.path(f"{prefix}.edges"), graph)
    write_labels(store.path(f"{prefix}.labels.csv"), labels)
    splits = split(n, tuple(params["fractions"]), labels=labels, seed=seed)
    write_masks(store.path(f"{prefix}.masks.csv"), splits)
    if params["feature_dim"] > 0:
        features = sbm_features(labels, params["feature_dim"], params["signal"], seed=seed)
        graph = graph.with_features(features)
        write_features(store.path(f"{prefix}.features.csv"), graph.features)
    print(f"{params['kind']}: N={graph.n_nodes} |E|={graph.n_edges} -> {store.out_dir}/{prefix}.*")
    return EXIT_OK


def cmd_train(params: dict, store: RunStore) -> int:
    graph = _load_graph(params)
    features = _load_features(params, graph.n_nodes)
    labels = _load_labels(params, graph.n_nodes)
    splits = _load_splits(params, labels, params["seed"])

    reports = []
    bank = None
    for run in range(params["runs"]):
        config = _model_config(params, params["seed"] + run)
        network, report = fit(config, graph, features, labels, splits, bank=bank)
        bank = network.bank
        reports.append(report)
        print(
            f"run {run}: best epoch {report.best_epoch}, val {report.val_accuracy}, "
            f"test {report.test_accuracy}, {report.parameter_count} parameters"
        )
        if params["checkpoint"] and run == 0:
            save_checkpoint(
                store.path("checkpoint"), config, features.shape[1], network.named_parameters()
            )

    test = [r.test_accuracy for r in reports if r.test_accuracy is not None]
    summary = {
        "reports": [r.to_dict() for r in reports],
        "mean_test_accuracy": float(np.mean(test)) if test else None,
        "std_test_accuracy": float(np.std(test)) if test else None,
    }
    store.write_json("train_report.json", summary)
    if test:
        print(f"mean test accuracy {summary['mean_test_accuracy']:.4f} over {len(test)} run(s)")
    return EXIT_OK


def cmd_sensitivity(params: dict, store: RunStore) -> int:
    graph = _load_graph(params)
    features = _load_features(params, graph.n_nodes)
    labels = _load_labels(params, graph.n_nodes)
    splits = _load_splits(params, labels, params["seed"])
    config = _model_config(params, params["seed"])
    seeds = range(params["seed"], params["seed"] + params["runs"])
    results = epsilon_sensitivity(
        config, graph, features, labels, splits, params["epsilons"], seeds
    )
    store.write_csv("sensitivity.csv", SENSITIVITY_HEADER, [r.to_row() for r in results])
    for result in results:
        print(f"eps={result.epsilon}: {result.mean_test_accuracy:.4f} "
              f"+/- {result.std_test_accuracy:.4f}")
    return EXIT_OK


def cmd_sparsity(params: dict, store: RunStore) -> int:
    laplacian = _load_graph(params).laplacian()
    rows = []
    for rho in range(1, params["rho_max"] + 1):
        dense = sobolev_term(laplacian, params["epsilon"], rho, sparse=False)
        sparse = sobolev_term(laplacian, params["epsilon"], rho, sparse=True)
        rows.append([rho, sparsity_percentage(dense), sparsity_percentage(sparse)])
        print(f"rho={rho}: dense {rows[-1][1]:.2f}%  sparse {rows[-1][2]:.2f}%")
    store.write_csv("sparsity.csv", ["rho", "dense_sparsity_pct", "sparse_sparsity_pct"], rows)
    return EXIT_OK


def cmd_curves(params: dict, store: RunStore) -> int:
    graph = _load_graph(params)
    matrix = graph.laplacian() if params["matrix"] == "laplacian" else graph.adjacency
    points = eigen_penalization_curves(matrix, params["rho_max"])
    header = ["rho", "index", "normalized_eig_dense", "normalized_eig_sparse"]
    store.write_csv("curves.csv", header, [list(p.to_dict().values()) for p in points])
    gaps = curve_gaps(points)
    store.write_json("curve_gaps.json", {str(rho): gap for rho, gap in gaps.items()})
    for rho, gap in gaps.items():
        print(f"rho={rho}: mean gap {gap:.4g}")
    return EXIT_OK


def cmd_homophily(params: dict, store: RunStore) -> int:
    report = {}
    if params["graph"]:
        graph = _load_graph(params)
        labels = _load_labels(params, graph.n_nodes)
        report["graph"] = homophily_index(graph.with_labels(labels))
        print(f"H(G) = {report['graph']:.6f}")
    if params["features"]:
        features = read_features(params["features"])
        labels = _load_labels(params, features.shape[0])
        report["knn"] = {}
        for k in params["k"]:
            value = homophily_index(knn_graph(features, k).with_labels(labels))
            report["knn"][str(k)] = value
            print(f"k={k}: H(G) = {value:.6f}")
    if not report:
        raise ValueError("homophily needs --graph or --features")
    store.write_json("homophily.json", report)
    return EXIT_OK


def cmd_bench(params: dict, store: RunStore) -> int:
    grid = BenchGrid(
        sizes=tuple(params["sizes"]),
        ps=tuple(params["ps"]),
        alpha=params["alpha"],
        epsilon=params["epsilon"],
        n_features=params["n_features"],
        repeats=params["repeats"],
        seed=params["seed"],
        models=tuple(params["models"]),
    )
    results = run_bench(grid)
    store.write_csv("bench.csv", BENCH_HEADER, [r.to_row() for r in results])
    failures = monotonic_failures(results, Baseline.S2GNN.value)
    if failures:
        logger.warning(f"median S2-GNN time decreased with N at p in {failures}")
    print(f"{len(results)} cells, {sum(r.status != 'ok' for r in results)} failed allocations")
    return EXIT_FAILED if failures else EXIT_OK


def cmd_stability(params: dict, store: RunStore) -> int:
    protocol = SweepProtocol(
        scenario=params["scenario"],
        n_nodes=params["n_nodes"],
        n_seeds=10 if params["quick"] else params["n_seeds"],
        base_seed=params["seed"],
        activation=params["activation"],
    )
    results = stability_sweep(protocol, workers=params["workers"])
    findings = sweep_findings(results)
    store.write_csv("sweep.csv", SWEEP_HEADER, [r.to_row() for r in results])
    store.write_json("sweep_findings.json", findings.to_dict())
    print(
        f"{len(results)} cells: {findings.violations} violation(s), "
        f"{len(findings.non_monotonic)} non-monotonic famil(ies), "
        f"{len(findings.rho_order_failures)} rho-order failure(s)"
    )
    return EXIT_OK if findings.ok else EXIT_FAILED


COMMANDS = {
    command.name: command
    for command in [
        Command("verify", "run property suites", cmd_verify, {
            "suite": ["all"], "quick": False,
        }),
        Command("knn", "build a k-NN graph from a feature CSV", cmd_knn, {
            "features": "", "k": 30, "kernel_bandwidth": "auto", "output": "knn.edges",
        }),
        Command("generate", "write a synthetic SBM or ER dataset", cmd_generate, {
            "kind": "sbm", "n_nodes": 200, "blocks": 2, "p_in": 0.1, "p_out": 0.01, "p": 0.1,
            "weights": "unit", "feature_dim": 0, "signal": 1.0, "output": "synthetic",
            "fractions": [0.1, 0.45, 0.45],
        }),
        Command("train", "train S2-GNN or the GCN baseline", cmd_train, {
            "graph": "", "features": "", "labels": "", "masks": "", "runs": 1,
            "checkpoint": False, **SPLIT_DEFAULTS, **MODEL_DEFAULTS,
        }),
        Command("sensitivity", "test accuracy across epsilon values", cmd_sensitivity, {
            "graph": "", "features": "", "labels": "", "masks": "", "runs": 5,
            "epsilons": [0.25, 0.5, 1.0, 1.5, 2.0], **SPLIT_DEFAULTS, **MODEL_DEFAULTS,
        }),
        Command("sparsity", "sparsity of dense vs Hadamard Sobolev terms", cmd_sparsity, {
            "graph": "", "epsilon": 1.0, "rho_max": 6,
        }),
        Command("curves", "normalized spectra of dense vs Hadamard powers", cmd_curves, {
            "graph": "", "rho_max": 3, "matrix": "laplacian",
        }),
        Command("homophily", "homophily index of a graph or of k-NN graphs", cmd_homophily, {
            "graph": "", "labels": "", "features": "", "k": [10, 20, 30, 40],
        }),
        Command("bench", "forward time and memory on random graphs", cmd_bench, {
            "sizes": [500, 1000, 5000, 10000], "ps": [0.03, 0.04, 0.05, 0.06], "alpha": 3,
            "epsilon": 1.0, "n_features": 16, "repeats": 30, "models": ["s2gnn", "gcn"],
        }),
        Command("stability", "randomized output-stability sweep", cmd_stability, {
            "scenario": "grid", "n_nodes": 10, "n_seeds": 100, "quick": False, "workers": 1,
            "activation": "identity",
        }),
    ]
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2gnn", description="Sparse Sobolev graph neural networks"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS.values():
        sub = subparsers.add_parser(command.name, help=command.help)
        sub.add_argument("--config", help="key = value file; flags override it")
        sub.add_argument("--seed", default=None, help="global seed (default: 0)")
        sub.add_argument(
            "--out", default=None, help=f"output directory (default: runs/{command.name})"
        )
        sub.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
        for key, default in command.defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                sub.add_argument(flag, dest=key, action="store_const", const="true", default=None)
            else:
                shown = ",".join(map(str, default)) if isinstance(default, list) else default
                sub.add_argument(flag, dest=key, default=None, help=f"(default: {shown})")
    return parser


def configure_logging(
    verbosity: int, out_dir: Path | None = None
) -> logging.FileHandler | None:
    """Log to stderr at WARNING, INFO (-v) or DEBUG (-vv), and to <out>/run.log if given.

    Returns the file handler so the caller can close it.
    """
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbosity, 2)]
    fmt = "%(asctime)s %(levelname)s %(name)s: %(message)s"
    logging.basicConfig(level=level, format=fmt, stream=sys.stderr, force=True)
    if out_dir is not None:
        handler = logging.FileHandler(out_dir / LOG_NAME)
        handler.setFormatter(logging.Formatter(fmt))
        logging.getLogger().addHandler(handler)
        return handler
    return None


def resolve_params(command: Command, args: argparse.Namespace) -> RunConfig:
    """Merge flags, --config and defaults into the command's RunConfig."""
    defaults = {"seed": 0, **command.defaults}
    file_values = load_config_file(args.config) if args.config else None
    if file_values and file_values.get("command", command.name) != command.name:
        raise ValueError(f"{args.config} is a manifest of {file_values['command']!r}")
    flags = {
        key: coerce(key, getattr(args, key), defaults[key])
        for key in defaults
        if getattr(args, key, None) is not None
    }
    params = resolve(defaults, file_values, flags)
    seed = int(params.pop("seed"))
    out_dir = args.out or f"runs/{command.name}"
    return RunConfig(command=command.name, seed=seed, out_dir=out_dir, params=params)


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    command = COMMANDS[args.command]
    configure_logging(args.verbose)
    file_handler = None
    try:
        run = resolve_params(command, args)
        store = RunStore(run.out_dir)
        file_handler = configure_logging(args.verbose, store.out_dir)
        store.write_manifest({"command": run.command, "seed": run.seed, **run.params})
        logger.info(f"{run.command}: writing to {store.out_dir}")
        code = command.handler({"seed": run.seed, **run.params}, store)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except S2GNNError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    finally:
        if file_handler is not None:
            logging.getLogger().removeHandler(file_handler)
            file_handler.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
