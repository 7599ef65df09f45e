"""Sparse Sobolev graph neural networks with spectral and stability checks."""

__version__ = "0.1.0"

from .graphgen import Graph, Perturbation, SplitMask  # noqa: E402
from .models import ModelConfig, TrainReport  # noqa: E402
from .sobolev import ShiftBank, build_shift_bank, sparse_sobolev_norm  # noqa: E402
from .sparse_core import SparseMatrix, SpectralDecomposition, eig_sym  # noqa: E402
from .store import RunStore  # noqa: E402

__all__ = [
    "Graph",
    "ModelConfig",
    "Perturbation",
    "RunStore",
    "ShiftBank",
    "SparseMatrix",
    "SpectralDecomposition",
    "SplitMask",
    "TrainReport",
    "__version__",
    "build_shift_bank",
    "eig_sym",
    "sparse_sobolev_norm",
]
