"""Shared pytest fixtures: small hand-checkable graphs and seeded random ones."""

import numpy as np
import pytest

from sparse_sobolev_gnn.graphgen import (
    WeightDistribution,
    erdos_renyi,
    graph_from_edges,
    sbm,
    sbm_features,
    split,
)


@pytest.fixture
def p2():
    """Path on two nodes: a single unit edge."""
    return graph_from_edges(2, [(0, 1)])


@pytest.fixture
def p3():
    """Path 0 - 1 - 2 with unit weights."""
    return graph_from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    """Triangle labeled (a, a, b)."""
    return graph_from_edges(3, [(0, 1), (0, 2), (1, 2)], node_labels=np.array([0, 0, 1]))


@pytest.fixture
def random_er():
    """Weighted Erdos-Renyi graph on 12 nodes."""
    return erdos_renyi(12, 0.4, weight_dist=WeightDistribution.UNIFORM, seed=7)


@pytest.fixture
def sbm_task():
    """Two-block SBM with label-correlated features and a 10/45/45 split."""
    graph = sbm(60, 2, 0.3, 0.02, seed=3)
    labels = graph.node_labels
    features = sbm_features(labels, 8, signal=2.0, seed=3)
    splits = split(60, labels=labels, seed=3)
    return graph, features, labels, splits


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
