"""Tests for S2-GNN layers, the network, the optimizer and training."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp

from sparse_sobolev_gnn.exceptions import (
    ConfigError,
    DenseCapError,
    MissingCacheError,
    ShapeMismatchError,
)
from sparse_sobolev_gnn.graphgen import sbm, split
from sparse_sobolev_gnn.models import (
    Activation,
    Baseline,
    FusionMode,
    ModelConfig,
    TrainStatus,
)
from sparse_sobolev_gnn.neural import (
    Adam,
    Network,
    accuracy,
    branch_forward,
    epsilon_sensitivity,
    fit,
    fuse_linear,
    fuse_mlp,
    gcn_layer,
    init_params,
    masked_cross_entropy,
    parameter_count,
)
from sparse_sobolev_gnn.sobolev import BankMode, build_shift_bank, gcn_operator
from sparse_sobolev_gnn.sparse_core import add_scaled_identity
from sparse_sobolev_gnn.verify import GRADIENT_RTOL, gradient_check


def small_config(**overrides) -> ModelConfig:
    values = {"alpha": 2, "hidden_units": [6, 2], "dropout": 0.0, "max_epochs": 30}
    values.update(overrides)
    return ModelConfig(**values)


class TestLayers:
    """Tests for branch propagation and fusion."""

    def test_identity_branch(self, rng):
        """Test that shift=None computes H W + b."""
        h = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 2))
        np.testing.assert_allclose(branch_forward(None, h, w, np.ones(2)), h @ w + 1.0)

    def test_relu_branch(self, p3):
        """Test sigma(S H W) with a ReLU clamps negatives."""
        out = branch_forward(p3.adjacency, -np.ones((3, 1)), np.ones((1, 1)), None,
                             Activation.RELU)
        np.testing.assert_array_equal(out, np.zeros((3, 1)))

    def test_branch_shape_mismatch(self, rng):
        """Test that H and W must chain."""
        with pytest.raises(ShapeMismatchError):
            branch_forward(None, rng.standard_normal((4, 3)), rng.standard_normal((2, 2)))

    def test_fuse_linear(self):
        """Test sum_i mu_i B_i."""
        fused = fuse_linear([np.ones((2, 2)), 2 * np.ones((2, 2))], [0.5, 0.25])
        np.testing.assert_allclose(fused, np.ones((2, 2)))
        with pytest.raises(ShapeMismatchError):
            fuse_linear([np.ones((2, 2))], [1.0, 1.0])

    def test_fuse_mlp(self):
        """Test concatenation in branch order times W_MLP."""
        first = np.array([[1.0], [2.0]])
        second = np.array([[3.0], [4.0]])
        fused = fuse_mlp([first, second], np.array([[1.0], [10.0]]))
        np.testing.assert_allclose(fused, [[31.0], [42.0]])
        with pytest.raises(ShapeMismatchError):
            fuse_mlp([first, second], np.ones((3, 1)))

    def test_gcn_layer_accepts_operator(self, p3, rng):
        """Test that a prebuilt operator gives the same result as the graph."""
        h = rng.standard_normal((3, 2))
        w = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(
            gcn_layer(p3, h, w), gcn_layer(gcn_operator(p3), h, w)
        )


class TestParameters:
    """Tests for initialization and parameter counts."""

    def test_linear_fusion_count(self):
        """Test (alpha + 1) branches of W and b plus alpha + 1 fusion scalars per layer."""
        params = init_params(ModelConfig(alpha=3, hidden_units=[16, 2]), in_dim=8)
        assert parameter_count(params) == (4 * (8 * 16 + 16) + 4) + (4 * (16 * 2 + 2) + 4)
        np.testing.assert_allclose(params[0].fusion_linear, np.full(4, 0.25))

    def test_mlp_fusion_count(self):
        """Test that MLP fusion adds (alpha + 1) * H^2 weights per layer."""
        config = ModelConfig(alpha=3, hidden_units=[16, 2], fusion=FusionMode.MLP)
        params = init_params(config, in_dim=8)
        expected = (4 * (8 * 16 + 16) + 4 * 16 * 16) + (4 * (16 * 2 + 2) + 4 * 2 * 2)
        assert parameter_count(params) == expected

    def test_gcn_count(self):
        """Test the single-branch GCN baseline."""
        params = init_params(ModelConfig(baseline=Baseline.GCN, hidden_units=[16, 2]), 8)
        assert parameter_count(params) == (8 * 16 + 16) + (16 * 2 + 2)

    def test_seeded(self):
        """Test that equal seeds give equal weights."""
        first = init_params(ModelConfig(seed=4), 5)
        second = init_params(ModelConfig(seed=4), 5)
        np.testing.assert_array_equal(first[0].branch_weights[2], second[0].branch_weights[2])


class TestLosses:
    """Tests for the masked loss and accuracy."""

    def test_uniform_logits(self):
        """Test that uniform log-probabilities give log C."""
        log_probs = np.log(np.full((4, 3), 1.0 / 3.0))
        loss = masked_cross_entropy(log_probs, [0, 1, 2, 0], np.ones(4, dtype=bool))
        assert loss == pytest.approx(np.log(3.0))

    def test_perfect_prediction(self):
        """Test zero loss and full accuracy on one-hot log-probabilities."""
        log_probs = np.log(np.array([[1.0, 1e-300], [1e-300, 1.0]]))
        mask = np.array([True, True])
        assert masked_cross_entropy(log_probs, [0, 1], mask) == pytest.approx(0.0)
        assert accuracy(log_probs, [0, 1], mask) == 1.0

    def test_mask_selects_nodes(self):
        """Test that only masked nodes count."""
        log_probs = np.log(np.array([[0.9, 0.1], [0.9, 0.1]]))
        assert accuracy(log_probs, [0, 1], np.array([True, False])) == 1.0


class TestNetwork:
    """Tests for the forward pass and its invariants."""

    def test_rows_normalize(self, sbm_task):
        """Test that every output row is a log-distribution."""
        graph, features, _, _ = sbm_task
        log_probs = Network(ModelConfig(), graph, features.shape[1]).forward(features)
        np.testing.assert_allclose(logsumexp(log_probs, axis=1), 0.0, atol=1e-9)

    def test_permutation_equivariance(self, random_er, rng):
        """Test forward(pi G, pi X) = pi forward(G, X) for fixed weights."""
        features = rng.standard_normal((random_er.n_nodes, 3))
        config = ModelConfig(alpha=3, hidden_units=[4, 2], fusion=FusionMode.MLP)
        network = Network(config, random_er, 3)
        order = rng.permutation(random_er.n_nodes)
        moved = Network(config, random_er.permuted(order), 3, params=network.snapshot())
        np.testing.assert_allclose(
            moved.forward(features[order]), network.forward(features)[order], atol=1e-9
        )

    def test_stored_entries_independent_of_rho(self, random_er):
        """Test alpha * nnz(A + eps*I) operator entries per layer."""
        for alpha in (1, 3, 5):
            network = Network(ModelConfig(alpha=alpha), random_er, 4)
            nnz = add_scaled_identity(random_er.adjacency, 1.0).nnz
            assert network.stored_entries() == alpha * nnz

    def test_dropout_only_in_training(self, sbm_task):
        """Test that evaluation is deterministic and training mode drops inputs."""
        graph, features, _, _ = sbm_task
        network = Network(ModelConfig(dropout=0.5), graph, features.shape[1])
        first = network.forward(features)
        np.testing.assert_array_equal(first, network.forward(features))
        dropped = network.forward(features, training=True, rng=np.random.default_rng(0))
        assert not np.allclose(first, dropped)

    def test_backward_needs_forward(self, sbm_task):
        """Test that gradients require cached intermediates."""
        graph, features, labels, splits = sbm_task
        network = Network(ModelConfig(), graph, features.shape[1])
        with pytest.raises(MissingCacheError):
            network.backward(labels, splits.train)

    def test_feature_shape(self, sbm_task):
        """Test that features must match the graph and input width."""
        graph, features, _, _ = sbm_task
        network = Network(ModelConfig(), graph, features.shape[1])
        with pytest.raises(ShapeMismatchError):
            network.forward(features[:, :3])

    def test_bank_must_fit(self, sbm_task, random_er):
        """Test that a bank built for another graph is refused."""
        graph, features, _, _ = sbm_task
        bank = build_shift_bank(random_er, 1.0, 3)
        with pytest.raises(ShapeMismatchError):
            Network(ModelConfig(alpha=3), graph, features.shape[1], bank=bank)

    def test_named_parameters_round_trip(self, sbm_task):
        """Test that loading named tensors reproduces the outputs."""
        graph, features, _, _ = sbm_task
        source = Network(ModelConfig(seed=1), graph, features.shape[1])
        target = Network(ModelConfig(seed=2), graph, features.shape[1])
        target.load_named_parameters(source.named_parameters())
        np.testing.assert_array_equal(target.forward(features), source.forward(features))

    def test_ablation_hadamard_off(self, random_er):
        """Test that every non-identity branch uses the GCN operator."""
        config = ModelConfig(alpha=3, ablation_hadamard_off=True)
        network = Network(config, random_er, 4)
        assert network.bank.mode == BankMode.GCN
        expected = gcn_operator(random_er).to_dense()
        assert network.operators[0] is None
        for op in network.operators[1:]:
            np.testing.assert_array_equal(op.to_dense(), expected)

    def test_ablation_regular_norm_dense_cap(self, random_er, monkeypatch):
        """Test that regular Sobolev banks stop at the dense cap."""
        monkeypatch.setenv("S2GNN_DENSE_CAP", "5")
        with pytest.raises(DenseCapError):
            Network(ModelConfig(alpha=2, ablation_regular_norm=True), random_er, 4)


class TestGradients:
    """Tests for hand-derived gradients against central differences."""

    @pytest.mark.parametrize("fusion", [FusionMode.LINEAR, FusionMode.MLP])
    @pytest.mark.parametrize("activation", [Activation.IDENTITY, Activation.RELU])
    def test_finite_differences(self, random_er, rng, fusion, activation):
        """Test every parameter tensor of a two-layer network."""
        features = rng.standard_normal((random_er.n_nodes, 3))
        labels = rng.integers(0, 3, size=random_er.n_nodes)
        mask = rng.random(random_er.n_nodes) < 0.7
        mask[0] = True
        config = ModelConfig(
            alpha=2, hidden_units=[4, 3], fusion=fusion, dropout=0.0, weight_decay=1e-2,
            branch_activation=activation, seed=5,
        )
        check = gradient_check(Network(config, random_er, 3), features, labels, mask)
        assert check.max_error < GRADIENT_RTOL

    def test_weight_decay_term(self, sbm_task):
        """Test that the decay adds wd * W to the branch-weight gradient."""
        graph, features, labels, splits = sbm_task
        plain = Network(small_config(weight_decay=0.0), graph, features.shape[1])
        decayed = Network(small_config(weight_decay=0.1), graph, features.shape[1],
                          params=plain.snapshot())
        plain.forward(features)
        decayed.forward(features)
        g_plain = plain.backward(labels, splits.train)
        g_decayed = decayed.backward(labels, splits.train)
        weight = plain.params[0].branch_weights[1]
        np.testing.assert_allclose(
            g_decayed[0].branch_weights[1] - g_plain[0].branch_weights[1], 0.1 * weight
        )


class TestAdam:
    """Tests for the optimizer."""

    def test_first_step_moves_by_learning_rate(self):
        """Test that the bias-corrected first step has size lr."""
        param = np.array([1.0, -2.0])
        Adam(0.1).step({"w": param}, {"w": np.array([4.0, -0.5])})
        np.testing.assert_allclose(param, [0.9, -1.9], atol=1e-6)

    def test_names_must_match(self):
        """Test that gradients must cover the same tensors."""
        with pytest.raises(KeyError):
            Adam(0.1).step({"w": np.zeros(1)}, {"v": np.zeros(1)})

    def test_negative_learning_rate(self):
        """Test that lr < 0 is rejected."""
        with pytest.raises(ValueError):
            Adam(-0.1)


class TestTraining:
    """Tests for the training loop."""

    def test_learns_sbm(self, sbm_task):
        """Test that a short run separates two well-separated blocks."""
        graph, features, labels, splits = sbm_task
        _, report = fit(ModelConfig(max_epochs=100, seed=0), graph, features, labels, splits)
        assert report.test_accuracy >= 0.7
        assert report.history[-1].train_loss < report.history[0].train_loss
        assert 1 <= report.best_epoch <= 100
        assert report.parameter_count > 0

    def test_deterministic(self, sbm_task):
        """Test that equal seeds give identical reports."""
        graph, features, labels, splits = sbm_task
        config = ModelConfig(max_epochs=15, seed=3)
        first = fit(config, graph, features, labels, splits)[1]
        second = fit(config, graph, features, labels, splits)[1]
        assert first.to_dict(include_timing=False) == second.to_dict(include_timing=False)

    def test_zero_learning_rate(self, sbm_task):
        """Test that lr = 0 leaves the parameters and the loss unchanged."""
        graph, features, labels, splits = sbm_task
        config = small_config(learning_rate=0.0, max_epochs=5)
        network, report = fit(config, graph, features, labels, splits)
        initial = Network(config, graph, features.shape[1])
        for name, tensor in initial.named_parameters().items():
            np.testing.assert_array_equal(network.named_parameters()[name], tensor)
        losses = [record.train_loss for record in report.history]
        assert losses == [losses[0]] * 5

    def test_early_stopping(self, sbm_task):
        """Test that a flat validation curve stops after `patience` epochs."""
        graph, features, labels, splits = sbm_task
        config = small_config(learning_rate=0.0, max_epochs=50, patience=1)
        report = fit(config, graph, features, labels, splits)[1]
        assert report.status == TrainStatus.EARLY_STOPPED
        assert len(report.history) == 2
        assert report.best_epoch == 1

    def test_gcn_equivalent_trajectory(self, sbm_task):
        """Test that alpha = 1, eps = 1 without fusion trains exactly like a GCN."""
        graph, features, labels, splits = sbm_task
        s2gnn = ModelConfig(alpha=1, epsilon=1.0, fusion=FusionMode.NONE, max_epochs=20)
        gcn = replace(s2gnn, baseline=Baseline.GCN)
        first = fit(s2gnn, graph, features, labels, splits)[1]
        second = fit(gcn, graph, features, labels, splits)[1]
        assert [r.to_dict() for r in first.history] == [r.to_dict() for r in second.history]
        assert first.test_accuracy == second.test_accuracy

    def test_output_width_must_cover_labels(self, sbm_task):
        """Test that labels beyond the output width are refused."""
        graph, features, labels, splits = sbm_task
        with pytest.raises(ConfigError):
            fit(ModelConfig(hidden_units=[4, 1], max_epochs=1), graph, features, labels, splits)


class TestEpsilonSensitivity:
    """Tests for the epsilon sweep."""

    def test_one_result_per_epsilon(self, sbm_task):
        """Test mean/std aggregation over seeds."""
        graph, features, labels, splits = sbm_task
        results = epsilon_sensitivity(
            small_config(max_epochs=5), graph, features, labels, splits, [0.5, 1.5], [0, 1]
        )
        assert [r.epsilon for r in results] == [0.5, 1.5]
        assert all(r.n_seeds == 2 for r in results)
        assert all(0.0 <= r.mean_test_accuracy <= 1.0 for r in results)

    def test_zero_epsilon_rejected(self, sbm_task):
        """Test that eps = 0 is refused like the shift bank refuses it."""
        graph, features, labels, splits = sbm_task
        with pytest.raises(ConfigError):
            epsilon_sensitivity(small_config(), graph, features, labels, splits, [0.0], [0])

    def test_needs_seeds(self, sbm_task):
        """Test that an empty seed list is refused."""
        graph, features, labels, splits = sbm_task
        with pytest.raises(ConfigError):
            epsilon_sensitivity(small_config(), graph, features, labels, splits, [1.0], [])


@pytest.mark.slow
class TestSbmAcceptance:
    """Full-size SBM training against the GCN baseline."""

    def test_ten_seed_accuracy(self):
        """Test mean test accuracy >= 0.85 and within 0.02 of the GCN baseline."""
        graph = sbm(200, 2, 0.1, 0.01, seed=0)
        labels = graph.node_labels
        features = np.eye(200)
        splits = split(200, labels=labels, seed=0)
        s2gnn = ModelConfig(alpha=3, epsilon=1.0, hidden_units=[16, 2])
        gcn = replace(s2gnn, baseline=Baseline.GCN)

        def mean_accuracy(config: ModelConfig) -> float:
            scores = [
                fit(replace(config, seed=seed), graph, features, labels, splits)[1].test_accuracy
                for seed in range(10)
            ]
            return float(np.mean(scores))

        s2gnn_mean = mean_accuracy(s2gnn)
        assert s2gnn_mean >= 0.85
        assert s2gnn_mean >= mean_accuracy(gcn) - 0.02
