"""Tests for configuration and result records."""

import math

import pytest

from sparse_sobolev_gnn.exceptions import ConfigError
from sparse_sobolev_gnn.models import (
    BENCH_HEADER,
    SWEEP_HEADER,
    Baseline,
    BenchCellResult,
    BoundBreakdown,
    EpochRecord,
    FusionMode,
    ModelConfig,
    PropertyResult,
    RunConfig,
    SweepCellResult,
    TrainReport,
    TrainStatus,
)
from sparse_sobolev_gnn.sobolev import BankMode, ShiftKind


class TestModelConfig:
    """Tests for ModelConfig."""

    def test_defaults_are_valid(self):
        """Test that the default configuration validates."""
        config = ModelConfig()
        config.validate()
        assert config.n_branches == 4
        assert config.n_classes == 2
        assert config.bank_mode == BankMode.SPARSE_SOBOLEV

    def test_strings_become_enums(self):
        """Test that enum fields accept their string values."""
        config = ModelConfig(fusion="mlp", baseline="gcn", base_kind="laplacian_sobolev")
        assert config.fusion == FusionMode.MLP
        assert config.baseline == Baseline.GCN
        assert config.base_kind == ShiftKind.LAPLACIAN
        assert config.n_branches == 1

    def test_round_trip(self):
        """Test to_dict / from_dict."""
        config = ModelConfig(alpha=4, epsilon=0.5, hidden_units=[8, 8, 3], n_layers=3, patience=10)
        data = config.to_dict()
        assert data["fusion"] == "linear"
        assert ModelConfig.from_dict(data) == config

    def test_from_dict_partial(self):
        """Test that missing keys take their defaults."""
        config = ModelConfig.from_dict({"alpha": 2})
        assert config.alpha == 2
        assert config.epsilon == 1.0

    def test_from_dict_unknown_key(self):
        """Test that unknown keys are rejected."""
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"alpha": 2, "beta": 1})

    @pytest.mark.parametrize(
        "overrides",
        [
            {"alpha": 0},
            {"alpha": 7},
            {"epsilon": 0.0},
            {"n_layers": 3},
            {"hidden_units": [0, 2]},
            {"dropout": 1.0},
            {"learning_rate": -0.1},
            {"max_epochs": 0},
            {"fusion": "none", "alpha": 2},
            {"ablation_hadamard_off": True, "ablation_regular_norm": True},
            {"patience": 0},
        ],
    )
    def test_validate_rejects(self, overrides):
        """Test each violated constraint."""
        with pytest.raises(ConfigError):
            ModelConfig(**overrides).validate()

    def test_bank_mode_follows_ablation(self):
        """Test the ablation switches."""
        assert ModelConfig(ablation_hadamard_off=True).bank_mode == BankMode.GCN
        assert ModelConfig(ablation_regular_norm=True).bank_mode == BankMode.REGULAR_SOBOLEV

    def test_layer_dims(self):
        """Test the width chain."""
        assert ModelConfig(hidden_units=[16, 2]).layer_dims(5) == [(5, 16), (16, 2)]


class TestTrainReport:
    """Tests for TrainReport."""

    def make_report(self) -> TrainReport:
        return TrainReport(
            config=ModelConfig(seed=3),
            history=[
                EpochRecord(1, 0.7, 0.5, 0.69, 0.55),
                EpochRecord(2, 0.6, 0.8, 0.65, 0.6),
            ],
            best_epoch=2,
            val_accuracy=0.6,
            test_accuracy=0.58,
            parameter_count=720,
            wall_time_s=1.25,
            status=TrainStatus.EARLY_STOPPED,
        )

    def test_round_trip(self):
        """Test to_dict / from_dict."""
        report = self.make_report()
        restored = TrainReport.from_dict(report.to_dict())
        assert restored == report

    def test_without_timing(self):
        """Test that the timing-free dictionary omits wall time."""
        data = self.make_report().to_dict(include_timing=False)
        assert "wall_time_s" not in data
        assert data["status"] == "early_stopped"
        assert data["history"][1]["train_accuracy"] == 0.8


class TestBoundBreakdown:
    """Tests for BoundBreakdown."""

    def test_holds(self):
        """Test the comparison with rounding slack."""
        assert BoundBreakdown(lhs=1.0, rhs_first_order=0.5, rhs_exact_binomial=1.0).holds
        assert BoundBreakdown(lhs=0.0, rhs_first_order=0.0, rhs_exact_binomial=0.0).holds
        assert not BoundBreakdown(lhs=1.01, rhs_first_order=2.0, rhs_exact_binomial=1.0).holds

    def test_round_trip(self):
        """Test to_dict / from_dict."""
        breakdown = BoundBreakdown(1.0, 2.0, 3.0, {"eta_1": 0.5})
        restored = BoundBreakdown.from_dict(breakdown.to_dict())
        assert restored == breakdown


class TestResultRows:
    """Tests for CSV row records."""

    def test_sweep_row(self):
        """Test that rows follow the header and round-trip through dicts."""
        cell = SweepCellResult(2, 0.3, 0.5, 10.0, 0.1, 0.01, 0.5, 0.6, 0, 100, 10.4)
        assert len(cell.to_row()) == len(SWEEP_HEADER)
        assert cell.key == (2, 0.3, 0.5, 10.0)
        assert SweepCellResult.from_dict(cell.to_dict()) == cell

    def test_bench_defaults(self):
        """Test that a failed cell keeps NaN measurements."""
        cell = BenchCellResult("s2gnn", 500, 0.03, 3, 30, status="alloc_failed")
        row = cell.to_row()
        assert len(row) == len(BENCH_HEADER)
        assert math.isnan(row[BENCH_HEADER.index("median_time_s")])
        assert row[-1] == "alloc_failed"

    def test_property_result(self):
        """Test PropertyResult serialization."""
        result = PropertyResult("norm", "triangle_inequality", True, 0.0, 1e-9, "ok")
        assert result.to_dict()["suite"] == "norm"
        assert result.to_dict()["passed"] is True


class TestRunConfig:
    """Tests for RunConfig."""

    def test_round_trip(self):
        """Test that params are flattened next to the reserved keys."""
        run = RunConfig(command="train", seed=4, out_dir="runs/train", params={"alpha": 3})
        data = run.to_dict()
        assert data == {"command": "train", "seed": 4, "out_dir": "runs/train", "alpha": 3}
        assert RunConfig.from_dict(data) == run

    def test_from_dict_defaults(self):
        """Test missing seed and output directory."""
        run = RunConfig.from_dict({"command": "verify"})
        assert run.seed == 0
        assert run.out_dir is None
        assert run.params == {}
