"""Exception hierarchy for the sparse Sobolev GNN engine.

Every error derives from S2GNNError and from the builtin a caller would
naturally catch (ValueError for bad input, RuntimeError for numerical
failures), so both `except S2GNNError` and `except ValueError` work.
"""

from pathlib import Path


class S2GNNError(Exception):
    """Base class for all engine errors."""


class ShapeMismatchError(S2GNNError, ValueError):
    """Operand dimensions do not line up."""


class DenseCapError(S2GNNError, ValueError):
    """A dense or Kronecker operation would exceed its size cap."""


class InvalidMatrixError(S2GNNError, ValueError):
    """A matrix violates a structural precondition (symmetry, PSD, CSR form)."""


class InvalidGraphError(S2GNNError, ValueError):
    """A graph, perturbation or split violates its invariants."""


class ConfigError(S2GNNError, ValueError):
    """A configuration key or value is not accepted."""


class ConvergenceError(S2GNNError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class MissingCacheError(S2GNNError, RuntimeError):
    """Backward was requested without the intermediates of a forward pass."""


class TrainingDivergedError(S2GNNError, RuntimeError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch: int, last_finite_loss: float | None):
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"loss diverged at epoch {epoch} (last finite loss: {last_finite_loss})"
        )


class FormatError(S2GNNError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, path: Path | str, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")
