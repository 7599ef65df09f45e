"""Sobolev terms and norms, normalized shift-operator banks and graph filters.

The sparse Sobolev term replaces the matrix power (M + eps*I)^rho by the
Hadamard power (M + eps*I)^(rho), which keeps the sparsity pattern of M + eps*I.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import DenseCapError, InvalidMatrixError, ShapeMismatchError
from .graphgen import Graph
from .sparse_core import (
    SYMMETRY_TOL,
    SparseMatrix,
    add_scaled_identity,
    eig_sym,
    hadamard_power,
    kronecker,
    matrix_power_dense,
    partial_permutation,
    spmm,
)

logger = logging.getLogger(__name__)

# Kronecker blow-up limits the spectral oracle to small graphs
SPECTRUM_ORACLE_MAX_N = 10
NEGATIVE_RADICAND_TOL = 1e-10


class ShiftKind(str, Enum):
    """Base matrix of the Sobolev term."""

    ADJACENCY = "adjacency_sobolev"
    LAPLACIAN = "laplacian_sobolev"


class BankMode(str, Enum):
    """How the per-branch operators were built."""

    SPARSE_SOBOLEV = "sparse_sobolev"  # Hadamard powers
    GCN = "gcn"  # Hadamard powers switched off: every branch uses the GCN operator
    REGULAR_SOBOLEV = "regular_sobolev"  # dense matrix powers


@dataclass(frozen=True, eq=False)
class ShiftBank:
    """Normalized operators S_(1)..S_(alpha); S_(0) is the implicit identity.

    Built once per graph and shared read-only by every layer.
    """

    epsilon: float
    alpha: int
    operators: tuple[SparseMatrix, ...]
    base_kind: ShiftKind = ShiftKind.ADJACENCY
    normalized: bool = True
    mode: BankMode = BankMode.SPARSE_SOBOLEV

    def __post_init__(self):
        if len(self.operators) != self.alpha:
            raise ValueError(f"expected {self.alpha} operators, got {len(self.operators)}")

    def operator(self, rho: int) -> SparseMatrix | None:
        """S_(rho), or None for the identity branch rho = 0."""
        if not 0 <= rho <= self.alpha:
            raise ValueError(f"branch {rho} outside 0..{self.alpha}")
        return None if rho == 0 else self.operators[rho - 1]

    @property
    def n_nodes(self) -> int:
        return self.operators[0].n_rows

    def stored_entries(self) -> int:
        """Operator entries touched by one layer (alpha * nnz(A + eps*I) for sparse banks)."""
        return sum(op.nnz for op in self.operators)


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Coefficients q_0..q_K of the polynomial filter sum_k q_k S^k."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64).ravel()
        if q.size == 0:
            raise ValueError("a filter needs at least the coefficient q_0")
        if not np.all(np.isfinite(q)):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "q", q)

    @property
    def order(self) -> int:
        """K, the highest power of S."""
        return len(self.q) - 1


def _require_symmetric(matrix: SparseMatrix, name: str = "matrix") -> None:
    if not matrix.is_symmetric(tol=SYMMETRY_TOL):
        raise InvalidMatrixError(f"{name} must be symmetric")


def sobolev_term(
    matrix: SparseMatrix,
    epsilon: float,
    rho: int,
    sparse: bool = True,
    dense_cap: int | None = None,
) -> SparseMatrix | np.ndarray:
    """(M + eps*I)^(rho) as a SparseMatrix, or the dense power (M + eps*I)^rho."""
    _require_symmetric(matrix)
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    shifted = add_scaled_identity(matrix, epsilon)
    if sparse:
        return hadamard_power(shifted, rho)
    return matrix_power_dense(shifted, rho, dense_cap=dense_cap)


def _quadratic_norm(x: np.ndarray, product: np.ndarray) -> float:
    radicand = float(x @ product)
    if radicand < -NEGATIVE_RADICAND_TOL:
        raise InvalidMatrixError(
            f"negative quadratic form {radicand:.3e}: the Sobolev term is not PSD"
        )
    return math.sqrt(max(radicand, 0.0))


def _as_signal(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (n,):
        raise ShapeMismatchError(f"signal has {x.size} entries for a {n}-node graph")
    return x


def sparse_sobolev_norm(x, laplacian: SparseMatrix, epsilon: float, rho: int) -> float:
    """sqrt(x^T (L + eps*I)^(rho) x), evaluated with one sparse product."""
    x = _as_signal(x, laplacian.n_rows)
    term = sobolev_term(laplacian, epsilon, rho, sparse=True)
    return _quadratic_norm(x, spmm(term, x))


def sobolev_norm(
    x, laplacian: SparseMatrix, epsilon: float, rho: int, dense_cap: int | None = None
) -> float:
    """The regular Sobolev norm sqrt(x^T (L + eps*I)^rho x) with a dense power."""
    x = _as_signal(x, laplacian.n_rows)
    term = sobolev_term(laplacian, epsilon, rho, sparse=False, dense_cap=dense_cap)
    return _quadratic_norm(x, term @ x)


def normalize_symmetric(matrix: SparseMatrix) -> SparseMatrix:
    """D^{-1/2} M D^{-1/2} with D = diag(M 1); the result stays exactly symmetric."""
    degrees = matrix.row_sums()
    if np.any(degrees <= 0):
        bad = int(np.argmin(degrees))
        raise InvalidMatrixError(
            f"cannot normalize: node {bad} has nonpositive degree {degrees[bad]:.3e}"
        )
    inv_sqrt = 1.0 / np.sqrt(degrees)
    rows = np.repeat(np.arange(matrix.n_rows), np.diff(matrix.row_ptr))
    values = matrix.values * (inv_sqrt[rows] * inv_sqrt[matrix.col_idx])
    return SparseMatrix(
        n_rows=matrix.n_rows,
        n_cols=matrix.n_cols,
        row_ptr=matrix.row_ptr,
        col_idx=matrix.col_idx,
        values=values,
    )


def gcn_operator(graph: Graph) -> SparseMatrix:
    """The GCN propagation operator D~^{-1/2} (A + I) D~^{-1/2}."""
    return normalize_symmetric(add_scaled_identity(graph.adjacency, 1.0))


def build_shift_bank(
    graph: Graph,
    epsilon: float,
    alpha: int,
    base_kind: ShiftKind = ShiftKind.ADJACENCY,
    mode: BankMode = BankMode.SPARSE_SOBOLEV,
    dense_cap: int | None = None,
) -> ShiftBank:
    """Precompute S_(rho) = D_rho^{-1/2} A_rho D_rho^{-1/2} for rho = 1..alpha.

    A_rho is (A + eps*I)^(rho) for sparse banks, the dense power (A + eps*I)^rho
    for regular banks, and A + I for every branch when Hadamard powers are off.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if alpha < 1:
        raise ValueError(f"alpha must be at least 1, got {alpha}")
    base_kind = ShiftKind(base_kind)
    mode = BankMode(mode)
    base = graph.adjacency if base_kind == ShiftKind.ADJACENCY else graph.laplacian()

    if mode == BankMode.GCN:
        operator = gcn_operator(graph)
        operators = tuple(operator for _ in range(alpha))
    elif mode == BankMode.REGULAR_SOBOLEV:
        shifted = add_scaled_identity(base, epsilon)
        operators = []
        for rho in range(1, alpha + 1):
            power = matrix_power_dense(shifted, rho, dense_cap=dense_cap)
            power = 0.5 * (power + power.T)
            operators.append(normalize_symmetric(SparseMatrix.from_dense(power)))
        operators = tuple(operators)
    else:
        shifted = add_scaled_identity(base, epsilon)
        try:
            powers = [hadamard_power(shifted, rho) for rho in range(1, alpha + 1)]
        except InvalidMatrixError as e:
            raise InvalidMatrixError(
                f"edge weights too small for alpha={alpha} (min |w| = "
                f"{np.min(np.abs(shifted.values)):.3e}); rescale the graph: {e}"
            ) from e
        operators = tuple(normalize_symmetric(power) for power in powers)

    bank = ShiftBank(
        epsilon=epsilon,
        alpha=alpha,
        operators=operators,
        base_kind=base_kind,
        normalized=True,
        mode=mode,
    )
    logger.info(
        f"Built {mode.value} shift bank: N={graph.n_nodes}, alpha={alpha}, "
        f"eps={epsilon}, stored entries={bank.stored_entries()}"
    )
    return bank


def apply_polynomial_filter(
    shift: SparseMatrix, coefficients: FilterCoefficients, x
) -> np.ndarray:
    """sum_k q_k S^k x via repeated sparse products (S^k is never formed)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != shift.n_cols:
        raise ShapeMismatchError(f"signal has {x.shape[0]} rows, operator has {shift.n_cols}")
    result = coefficients.q[0] * x
    shifted = x
    for q_k in coefficients.q[1:]:
        shifted = spmm(shift, shifted)
        result = result + q_k * shifted
    return result


def _hadamard_via_kronecker(dense: np.ndarray, rho: int, selector: np.ndarray) -> np.ndarray:
    if rho == 1:
        return dense
    inner = _hadamard_via_kronecker(dense, rho - 1, selector)
    outer = eig_sym(dense)
    inner_dec = eig_sym(0.5 * (inner + inner.T))
    vectors = kronecker(outer.eigenvectors, inner_dec.eigenvectors)
    values = np.kron(outer.eigenvalues, inner_dec.eigenvalues)
    return selector.T @ ((vectors * values) @ vectors.T) @ selector


def verify_hadamard_spectrum(matrix: SparseMatrix, rho: int) -> float:
    """Max-abs error between P^T (U kron U_(rho-1)) (Lam kron Lam_(rho-1)) (...)^T P
    and the directly computed Hadamard power.
    """
    if rho < 2:
        raise ValueError(f"the spectral identity needs rho >= 2, got {rho}")
    n = matrix.n_rows
    if n > SPECTRUM_ORACLE_MAX_N:
        raise DenseCapError(f"spectral oracle is limited to N <= {SPECTRUM_ORACLE_MAX_N}, got {n}")
    _require_symmetric(matrix)
    selector = partial_permutation(n).to_dense()
    reconstruction = _hadamard_via_kronecker(matrix.to_dense(), rho, selector)
    direct = hadamard_power(matrix, rho).to_dense()
    return float(np.max(np.abs(reconstruction - direct)))


@dataclass(frozen=True)
class CurvePoint:
    """One row of the eigenvalue-penalization table."""

    rho: int
    index: int
    normalized_eig_dense: float
    normalized_eig_sparse: float

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "index": self.index,
            "normalized_eig_dense": self.normalized_eig_dense,
            "normalized_eig_sparse": self.normalized_eig_sparse,
        }


def _normalized(eigenvalues: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    return eigenvalues / peak if peak > 0 else eigenvalues


def eigen_penalization_curves(
    matrix: SparseMatrix, rho_max: int, dense_cap: int | None = None
) -> list[CurvePoint]:
    """Max-normalized ascending spectra of M^rho and M^(rho) for rho = 1..rho_max."""
    _require_symmetric(matrix)
    points: list[CurvePoint] = []
    for rho in range(1, rho_max + 1):
        dense = eig_sym(matrix_power_dense(matrix, rho, dense_cap=dense_cap), dense_cap=dense_cap)
        sparse = eig_sym(hadamard_power(matrix, rho), dense_cap=dense_cap)
        dense_curve = _normalized(dense.eigenvalues)
        sparse_curve = _normalized(sparse.eigenvalues)
        points.extend(
            CurvePoint(rho, i, float(d), float(s))
            for i, (d, s) in enumerate(zip(dense_curve, sparse_curve))
        )
    return points


def curve_gaps(points: list[CurvePoint]) -> dict[int, float]:
    """Mean absolute gap between the dense and sparse curves, per rho."""
    gaps: dict[int, list[float]] = {}
    for point in points:
        gaps.setdefault(point.rho, []).append(
            abs(point.normalized_eig_dense - point.normalized_eig_sparse)
        )
    return {rho: float(np.mean(values)) for rho, values in gaps.items()}
