"""Semi-supervised node classification: the training loop and epsilon sweeps."""

import logging
import math
import time
from dataclasses import replace

import numpy as np

from ..exceptions import ConfigError, InvalidGraphError, ShapeMismatchError, TrainingDivergedError
from ..graphgen import Graph, SplitMask
from ..models import (
    EpochRecord,
    ModelConfig,
    SensitivityResult,
    TrainReport,
    TrainStatus,
)
from ..sobolev import ShiftBank
from ..sparse_core import as_dense
from .network import Network, accuracy, masked_cross_entropy, named_gradients, parameter_count
from .optim import Adam

logger = logging.getLogger(__name__)

LOG_EVERY = 50


def _check_inputs(config: ModelConfig, graph: Graph, features, labels, splits: SplitMask):
    features = as_dense(features, "features")
    labels = np.asarray(labels, dtype=np.int64)
    n = graph.n_nodes
    if features.shape[0] != n or labels.shape != (n,) or splits.n_nodes != n:
        raise ShapeMismatchError(
            f"graph has {n} nodes but features have {features.shape[0]} rows, "
            f"labels {labels.shape[0]} entries and splits {splits.n_nodes} entries"
        )
    labeled = splits.train | splits.val | splits.test
    if np.any(labels[labeled] < 0):
        raise InvalidGraphError("every node in a split needs a label")
    if labels[labeled].max() >= config.n_classes:
        raise ConfigError(
            f"output width {config.n_classes} does not cover label {labels[labeled].max()}"
        )
    return features, labels


def fit(
    config: ModelConfig,
    graph: Graph,
    features,
    labels,
    splits: SplitMask,
    bank: ShiftBank | None = None,
) -> tuple[Network, TrainReport]:
    """Train with Adam and keep the parameters of the best validation epoch.

    Without a validation split the best training-accuracy epoch is kept.

    Raises:
        TrainingDivergedError: If the training loss becomes NaN or infinite.
    """
    config.validate()
    features, labels = _check_inputs(config, graph, features, labels, splits)
    network = Network(config, graph, features.shape[1], bank=bank)
    optimizer = Adam(config.learning_rate)
    dropout_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    has_val = bool(splits.val.any())

    start = time.perf_counter()
    history: list[EpochRecord] = []
    best_params = network.snapshot()
    best_epoch = 0
    best_score = -math.inf
    stale = 0
    last_finite: float | None = None
    status = TrainStatus.COMPLETED

    for epoch in range(1, config.max_epochs + 1):
        network.forward(features, training=True, rng=dropout_rng)
        train_loss = network.loss(labels, splits.train)
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(epoch, last_finite)
        last_finite = train_loss
        grads = network.backward(labels, splits.train)

        log_probs = network.forward(features, training=False)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            train_accuracy=accuracy(log_probs, labels, splits.train),
        )
        if has_val:
            record.val_loss = masked_cross_entropy(log_probs, labels, splits.val)
            record.val_accuracy = accuracy(log_probs, labels, splits.val)
        history.append(record)

        score = record.val_accuracy if has_val else record.train_accuracy
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_params = network.snapshot()
            stale = 0
        else:
            stale += 1

        if epoch % LOG_EVERY == 0:
            logger.info(
                f"epoch {epoch}: loss={train_loss:.4f} train_acc={record.train_accuracy:.3f} "
                f"val_acc={record.val_accuracy}"
            )
        if config.patience is not None and stale >= config.patience:
            status = TrainStatus.EARLY_STOPPED
            logger.info(f"Early stop at epoch {epoch}; best epoch {best_epoch}")
            break
        optimizer.step(network.named_parameters(), named_gradients(grads))

    network.restore(best_params)
    log_probs = network.forward(features, training=False)
    report = TrainReport(
        config=config,
        history=history,
        best_epoch=best_epoch,
        val_accuracy=accuracy(log_probs, labels, splits.val) if has_val else None,
        test_accuracy=accuracy(log_probs, labels, splits.test) if splits.test.any() else None,
        parameter_count=parameter_count(network.params),
        wall_time_s=time.perf_counter() - start,
        status=status,
    )
    logger.info(
        f"Trained {config.baseline.value} (alpha={config.alpha}, eps={config.epsilon}): "
        f"best epoch {best_epoch}, test accuracy {report.test_accuracy}"
    )
    return network, report


def train(
    config: ModelConfig,
    graph: Graph,
    features,
    labels,
    splits: SplitMask,
    bank: ShiftBank | None = None,
) -> TrainReport:
    """Train a model and return its report."""
    return fit(config, graph, features, labels, splits, bank=bank)[1]


def epsilon_sensitivity(
    config: ModelConfig,
    graph: Graph,
    features,
    labels,
    splits: SplitMask,
    epsilons,
    seeds,
) -> list[SensitivityResult]:
    """Mean and std of test accuracy per epsilon; the bank is built once per epsilon."""
    if not splits.test.any():
        raise InvalidGraphError("epsilon sensitivity needs a non-empty test split")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("epsilon sensitivity needs at least one seed")

    results = []
    for epsilon in epsilons:
        base = replace(config, epsilon=float(epsilon))
        bank = None
        scores = []
        for seed in seeds:
            network, report = fit(replace(base, seed=seed), graph, features, labels, splits, bank)
            bank = network.bank
            scores.append(report.test_accuracy)
        result = SensitivityResult(
            epsilon=float(epsilon),
            mean_test_accuracy=float(np.mean(scores)),
            std_test_accuracy=float(np.std(scores)),
            n_seeds=len(seeds),
        )
        logger.info(
            f"eps={result.epsilon}: test accuracy {result.mean_test_accuracy:.3f} "
            f"+/- {result.std_test_accuracy:.3f}"
        )
        results.append(result)
    return results
