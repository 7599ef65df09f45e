"""Record types for model configuration, training reports and experiment results."""

import math
from dataclasses import dataclass, field
from enum import Enum

from .exceptions import ConfigError
from .sobolev import BankMode, ShiftKind

MAX_ALPHA = 6
# Relative slack when comparing a measured quantity against its bound
BOUND_RTOL = 1e-9


class FusionMode(str, Enum):
    """How branch outputs are combined inside a layer."""

    LINEAR = "linear"  # learned scalars mu_i
    MLP = "mlp"  # concatenation times W_MLP
    NONE = "none"  # single rho = 1 branch, no fusion


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"


class Baseline(str, Enum):
    S2GNN = "s2gnn"
    GCN = "gcn"


class TrainStatus(str, Enum):
    """How a training run ended."""

    COMPLETED = "completed"  # ran for max_epochs
    EARLY_STOPPED = "early_stopped"  # validation accuracy stopped improving


@dataclass
class ModelConfig:
    """Hyperparameters of an S2-GNN (or GCN baseline) run.

    hidden_units[-1] is the output width and must cover every class label.
    """

    alpha: int = 3
    epsilon: float = 1.0
    n_layers: int = 2
    hidden_units: list[int] = field(default_factory=lambda: [16, 2])
    fusion: FusionMode = FusionMode.LINEAR
    dropout: float = 0.5
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 200
    seed: int = 0
    ablation_hadamard_off: bool = False
    ablation_regular_norm: bool = False
    branch_activation: Activation = Activation.IDENTITY
    baseline: Baseline = Baseline.S2GNN
    base_kind: ShiftKind = ShiftKind.ADJACENCY
    patience: int | None = None

    def __post_init__(self):
        self.fusion = FusionMode(self.fusion)
        self.branch_activation = Activation(self.branch_activation)
        self.baseline = Baseline(self.baseline)
        self.base_kind = ShiftKind(self.base_kind)
        self.hidden_units = [int(h) for h in self.hidden_units]

    def validate(self) -> None:
        """Raise ConfigError on the first violated constraint."""
        if not 1 <= self.alpha <= MAX_ALPHA:
            raise ConfigError(f"alpha must lie in [1, {MAX_ALPHA}], got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be at least 1, got {self.n_layers}")
        if len(self.hidden_units) != self.n_layers:
            raise ConfigError(
                f"hidden_units has {len(self.hidden_units)} entries for {self.n_layers} layers"
            )
        if any(h < 1 for h in self.hidden_units):
            raise ConfigError(f"layer widths must be positive, got {self.hidden_units}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be nonnegative")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if self.fusion == FusionMode.NONE and self.alpha != 1:
            raise ConfigError("fusion 'none' runs a single branch and needs alpha = 1")
        if self.ablation_hadamard_off and self.ablation_regular_norm:
            raise ConfigError("choose at most one ablation")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")

    @property
    def bank_mode(self) -> BankMode:
        if self.ablation_hadamard_off:
            return BankMode.GCN
        if self.ablation_regular_norm:
            return BankMode.REGULAR_SOBOLEV
        return BankMode.SPARSE_SOBOLEV

    @property
    def n_branches(self) -> int:
        """Branches per layer: alpha + 1 with fusion, one otherwise."""
        if self.baseline == Baseline.GCN or self.fusion == FusionMode.NONE:
            return 1
        return self.alpha + 1

    @property
    def n_classes(self) -> int:
        return self.hidden_units[-1]

    def layer_dims(self, in_dim: int) -> list[tuple[int, int]]:
        """(input width, output width) of every layer."""
        widths = [in_dim, *self.hidden_units]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "n_layers": self.n_layers,
            "hidden_units": list(self.hidden_units),
            "fusion": self.fusion.value,
            "dropout": self.dropout,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "max_epochs": self.max_epochs,
            "seed": self.seed,
            "ablation_hadamard_off": self.ablation_hadamard_off,
            "ablation_regular_norm": self.ablation_regular_norm,
            "branch_activation": self.branch_activation.value,
            "baseline": self.baseline.value,
            "base_kind": self.base_kind.value,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        """Create from dictionary; missing keys take their defaults."""
        unknown = set(data) - set(cls().to_dict())
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    """Metrics of one training epoch (measured before the optimizer step)."""

    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpochRecord":
        return cls(**data)


@dataclass
class TrainReport:
    """Outcome of a training run, evaluated at the best-validation epoch."""

    config: ModelConfig
    history: list[EpochRecord]
    best_epoch: int
    val_accuracy: float | None
    test_accuracy: float | None
    parameter_count: int
    wall_time_s: float
    status: TrainStatus = TrainStatus.COMPLETED

    def to_dict(self, include_timing: bool = True) -> dict:
        """Convert to dictionary for JSON serialization.

        Without timing the dictionary is identical across reruns with equal seeds.
        """
        data = {
            "config": self.config.to_dict(),
            "history": [record.to_dict() for record in self.history],
            "best_epoch": self.best_epoch,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "parameter_count": self.parameter_count,
            "status": self.status.value,
        }
        if include_timing:
            data["wall_time_s"] = self.wall_time_s
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainReport":
        return cls(
            config=ModelConfig.from_dict(data["config"]),
            history=[EpochRecord.from_dict(r) for r in data["history"]],
            best_epoch=data["best_epoch"],
            val_accuracy=data.get("val_accuracy"),
            test_accuracy=data.get("test_accuracy"),
            parameter_count=data["parameter_count"],
            wall_time_s=data.get("wall_time_s", 0.0),
            status=TrainStatus(data.get("status", TrainStatus.COMPLETED.value)),
        )


@dataclass
class SensitivityResult:
    """Test accuracy across seeds for one epsilon."""

    epsilon: float
    mean_test_accuracy: float
    std_test_accuracy: float
    n_seeds: int

    def to_row(self) -> list:
        return [self.epsilon, self.mean_test_accuracy, self.std_test_accuracy, self.n_seeds]


SENSITIVITY_HEADER = ["epsilon", "mean_test_accuracy", "std_test_accuracy", "n_seeds"]


@dataclass
class BoundBreakdown:
    """Both sides of the output-stability bound and the terms that build them."""

    lhs: float
    rhs_first_order: float
    rhs_exact_binomial: float
    components: dict[str, float] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        """True if lhs <= rhs_exact_binomial up to rounding."""
        return self.lhs <= self.rhs_exact_binomial * (1.0 + BOUND_RTOL) + 1e-12

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs_first_order": self.rhs_first_order,
            "rhs_exact_binomial": self.rhs_exact_binomial,
            "components": dict(self.components),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BoundBreakdown":
        return cls(
            lhs=data["lhs"],
            rhs_first_order=data["rhs_first_order"],
            rhs_exact_binomial=data["rhs_exact_binomial"],
            components=dict(data.get("components", {})),
        )


SWEEP_HEADER = [
    "rho",
    "p_er",
    "epsilon",
    "snr_db",
    "mean_lhs",
    "std_lhs",
    "mean_rhs_fo",
    "mean_rhs_exact",
    "violations",
    "n_seeds",
    "mean_achieved_snr_db",
]


@dataclass
class SweepCellResult:
    """Aggregated stability measurements for one (rho, p, epsilon, SNR) cell."""

    rho: int
    p_er: float
    epsilon: float
    snr_db: float
    mean_lhs: float
    std_lhs: float
    mean_rhs_fo: float
    mean_rhs_exact: float
    violations: int
    n_seeds: int
    mean_achieved_snr_db: float

    @property
    def key(self) -> tuple[int, float, float, float]:
        return (self.rho, self.p_er, self.epsilon, self.snr_db)

    def to_row(self) -> list:
        return [getattr(self, name) for name in SWEEP_HEADER]

    def to_dict(self) -> dict:
        return dict(zip(SWEEP_HEADER, self.to_row()))

    @classmethod
    def from_dict(cls, data: dict) -> "SweepCellResult":
        return cls(**{name: data[name] for name in SWEEP_HEADER})


BENCH_HEADER = [
    "model",
    "n_nodes",
    "p_er",
    "alpha",
    "repeats",
    "mean_time_s",
    "median_time_s",
    "peak_mem_mb",
    "rss_mb",
    "mem_method",
    "stored_entries",
    "status",
]


@dataclass
class BenchCellResult:
    """Forward-pass timing and memory for one model on one random graph size."""

    model: str
    n_nodes: int
    p_er: float
    alpha: int
    repeats: int
    mean_time_s: float = math.nan
    median_time_s: float = math.nan
    peak_mem_mb: float = math.nan
    rss_mb: float = math.nan
    mem_method: str = "tracemalloc_peak"
    stored_entries: int = 0
    status: str = "ok"  # or "alloc_failed"

    def to_row(self) -> list:
        return [getattr(self, name) for name in BENCH_HEADER]


@dataclass
class PropertyResult:
    """Outcome of one verification property."""

    suite: str
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "threshold": self.threshold,
            "detail": self.detail,
        }


@dataclass
class RunConfig:
    """Resolved parameters of one CLI invocation, echoed into manifest.txt."""

    command: str
    seed: int = 0
    out_dir: str | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "out_dir": self.out_dir,
            **self.params,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        command = data.pop("command")
        seed = int(data.pop("seed", 0))
        out_dir = data.pop("out_dir", None)
        return cls(command=command, seed=seed, out_dir=out_dir, params=data)
