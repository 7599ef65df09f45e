"""Sparse and dense linear-algebra kernels.

SparseMatrix is a canonical CSR container (sorted column indices, no
duplicates, no stored zeros) backed by numpy arrays; the arithmetic itself
is delegated to scipy.sparse. Dense matrices are plain float64 numpy arrays.
"""

import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ConvergenceError,
    DenseCapError,
    InvalidMatrixError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 5000
DEFAULT_KRON_CAP = 4096

# Cyclic Jacobi is used up to this size, LAPACK above it
JACOBI_MAX_N = 64
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-6


def get_dense_cap() -> int:
    """Row cap for dense operations (env S2GNN_DENSE_CAP overrides)."""
    return int(os.environ.get("S2GNN_DENSE_CAP", DEFAULT_DENSE_CAP))


def get_kron_cap() -> int:
    """Dimension cap for Kronecker products (env S2GNN_KRON_CAP overrides)."""
    return int(os.environ.get("S2GNN_KRON_CAP", DEFAULT_KRON_CAP))


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Weighted matrix in canonical CSR form.

    Attributes:
        n_rows: Number of rows.
        n_cols: Number of columns.
        row_ptr: Row offsets, length n_rows + 1.
        col_idx: Column index of every stored entry, strictly increasing per row.
        values: Stored values, all nonzero and finite.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.array(self.row_ptr, dtype=np.int64)
        col_idx = np.array(self.col_idx, dtype=np.int64)
        values = np.array(self.values, dtype=np.float64)

        if self.n_rows < 0 or self.n_cols < 0:
            raise InvalidMatrixError(f"negative shape ({self.n_rows}, {self.n_cols})")
        if row_ptr.ndim != 1 or len(row_ptr) != self.n_rows + 1:
            raise InvalidMatrixError(
                f"row_ptr must have length n_rows + 1 = {self.n_rows + 1}, got {len(row_ptr)}"
            )
        nnz = len(values)
        if len(col_idx) != nnz:
            raise InvalidMatrixError("col_idx and values differ in length")
        if row_ptr[0] != 0 or row_ptr[-1] != nnz:
            raise InvalidMatrixError("row_ptr must start at 0 and end at len(values)")
        if np.any(np.diff(row_ptr) < 0):
            raise InvalidMatrixError("row_ptr must be non-decreasing")
        if nnz:
            if col_idx.min() < 0 or col_idx.max() >= self.n_cols:
                raise InvalidMatrixError("column index out of range")
            steps = np.diff(col_idx)
            within_row = np.ones(max(nnz - 1, 0), dtype=bool)
            starts = row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < nnz)]
            within_row[starts - 1] = False
            if np.any(steps[within_row] <= 0):
                raise InvalidMatrixError("column indices must be strictly increasing per row")
            if not np.all(np.isfinite(values)):
                raise InvalidMatrixError("stored values must be finite")
            if np.any(values == 0.0):
                raise InvalidMatrixError("explicit zeros are not allowed in canonical form")

        object.__setattr__(self, "row_ptr", _freeze(row_ptr))
        object.__setattr__(self, "col_idx", _freeze(col_idx))
        object.__setattr__(self, "values", _freeze(values))

    @classmethod
    def from_scipy(cls, matrix) -> "SparseMatrix":
        """Create from any scipy sparse matrix (or dense array), canonicalizing it."""
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        n_rows, n_cols = csr.shape
        return cls(
            n_rows=n_rows,
            n_cols=n_cols,
            row_ptr=csr.indptr,
            col_idx=csr.indices,
            values=csr.data,
        )

    @classmethod
    def from_coo(
        cls,
        rows,
        cols,
        values,
        shape: tuple[int, int],
    ) -> "SparseMatrix":
        """Create from coordinate triplets; duplicates are summed, zeros dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (len(rows) == len(cols) == len(values)):
            raise InvalidMatrixError("coordinate arrays differ in length")
        return cls.from_scipy(sp.coo_matrix((values, (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, array) -> "SparseMatrix":
        """Create from a dense 2-D array."""
        return cls.from_scipy(sp.csr_matrix(as_dense(array)))

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.n_rows, self.n_cols)
        )

    def to_scipy(self) -> sp.csr_matrix:
        """Return the scipy view. Callers must treat it as read-only."""
        return self._csr

    def to_dense(self) -> np.ndarray:
        """Materialize as a dense float64 array."""
        return self._csr.toarray()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        """Number of stored entries."""
        return len(self.values)

    @property
    def is_square(self) -> bool:
        return self.n_rows == self.n_cols

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.transpose())

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def same_pattern(self, other: "SparseMatrix") -> bool:
        """True if both matrices store exactly the same positions."""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
        )

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if not self.is_square:
            return False
        diff = self._csr - self._csr.transpose()
        if diff.nnz == 0:
            return True
        return bool(np.max(np.abs(diff.data)) <= tol)

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def as_dense(array, name: str = "matrix", ndim: int | None = 2) -> np.ndarray:
    """Validate and convert to a C-ordered float64 array with finite entries."""
    result = np.ascontiguousarray(array, dtype=np.float64)
    if ndim is not None and result.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {result.shape}")
    if not np.all(np.isfinite(result)):
        raise InvalidMatrixError(f"{name} contains non-finite entries")
    return result


def identity(n: int) -> SparseMatrix:
    """Sparse n x n identity."""
    return SparseMatrix.from_scipy(sp.identity(n, format="csr"))


def add_scaled_identity(matrix: SparseMatrix, epsilon: float) -> SparseMatrix:
    """Return M + epsilon * I. With epsilon > 0 the diagonal joins the pattern."""
    if not matrix.is_square:
        raise ShapeMismatchError(f"M + eps*I needs a square matrix, got {matrix.shape}")
    if epsilon == 0:
        return matrix
    return SparseMatrix.from_scipy(
        matrix.to_scipy() + epsilon * sp.identity(matrix.n_rows, format="csr")
    )


def _check_power(rho) -> int:
    if isinstance(rho, bool) or not isinstance(rho, (int, np.integer)):
        raise ValueError(f"power must be a positive integer, got {rho!r}")
    if rho < 1:
        raise ValueError(f"power must be a positive integer, got {rho}")
    return int(rho)


def hadamard_power(matrix: SparseMatrix, rho: int) -> SparseMatrix:
    """Elementwise rho-th power. The sparsity pattern is kept exactly.

    Stored values whose rho-th power underflows (e.g. 1e-200 squared) cannot keep
    their place in the pattern, so they are refused instead of silently dropped.
    Rescale such weights before building Sobolev terms or shift banks.

    Raises:
        ValueError: If rho is not a positive integer (rho = 0 is the identity
            branch and must be handled by the caller).
        InvalidMatrixError: If a stored value underflows to zero.
    """
    rho = _check_power(rho)
    if not matrix.is_square:
        raise ShapeMismatchError(f"Hadamard power needs a square matrix, got {matrix.shape}")
    values = np.power(matrix.values, rho)
    if np.any(values == 0.0):
        raise InvalidMatrixError(
            f"Hadamard power {rho} underflows to zero; the pattern cannot be preserved"
        )
    return SparseMatrix(
        n_rows=matrix.n_rows,
        n_cols=matrix.n_cols,
        row_ptr=matrix.row_ptr,
        col_idx=matrix.col_idx,
        values=values,
    )


def _check_dense_cap(n: int, dense_cap: int | None) -> None:
    cap = get_dense_cap() if dense_cap is None else dense_cap
    if n > cap:
        raise DenseCapError(f"{n} rows exceed the dense cap of {cap}")


def matrix_power_dense(
    matrix: SparseMatrix, rho: int, dense_cap: int | None = None
) -> np.ndarray:
    """Ordinary matrix power M^rho, materialized densely."""
    rho = _check_power(rho)
    if not matrix.is_square:
        raise ShapeMismatchError(f"matrix power needs a square matrix, got {matrix.shape}")
    _check_dense_cap(matrix.n_rows, dense_cap)
    return np.linalg.matrix_power(matrix.to_dense(), rho)


def spmm(matrix: SparseMatrix, dense) -> np.ndarray:
    """Sparse times dense product S @ H (H may be a matrix or a vector).

    Accumulation runs row by row over the stored entries in ascending column
    order, so results are bit-reproducible.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim not in (1, 2):
        raise ShapeMismatchError(f"dense operand must be 1-D or 2-D, got {dense.shape}")
    if matrix.n_cols != dense.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply {matrix.shape} by {dense.shape}: inner dimensions differ"
        )
    return np.asarray(matrix.to_scipy() @ dense)


def kronecker(left, right, kron_cap: int | None = None) -> np.ndarray:
    """Dense Kronecker product in the standard block layout."""
    left = as_dense(left, "left operand")
    right = as_dense(right, "right operand")
    cap = get_kron_cap() if kron_cap is None else kron_cap
    rows = left.shape[0] * right.shape[0]
    cols = left.shape[1] * right.shape[1]
    if rows > cap or cols > cap:
        raise DenseCapError(f"Kronecker product {rows}x{cols} exceeds the cap of {cap}")
    return np.kron(left, right)


def partial_permutation(n: int) -> SparseMatrix:
    """Selector P_N with P[k, i] = 1 iff k = i*N + i.

    It satisfies S o T = P^T (S kron T) P for any N x N matrices S and T.
    """
    if n < 1:
        raise ValueError(f"N must be at least 1, got {n}")
    cols = np.arange(n)
    return SparseMatrix.from_coo(cols * n + cols, cols, np.ones(n), shape=(n * n, n))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenvalues in ascending order and the matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        """U diag(lambda) U^T."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def _off_diagonal_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _jacobi_eigh(
    matrix: np.ndarray, tol: float, max_sweeps: int
) -> tuple[np.ndarray, np.ndarray]:
    a = matrix.copy()
    n = a.shape[0]
    vectors = np.eye(n)
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return np.zeros(n), vectors

    threshold = tol * scale
    # Entries below this cannot keep the off-diagonal norm above threshold
    negligible = threshold / (2 * n)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]

    for sweep in range(max_sweeps):
        if _off_diagonal_norm(a) < threshold:
            logger.debug(f"Jacobi converged after {sweep} sweeps (n={n})")
            return np.diag(a).copy(), vectors
        for p, q in pairs:
            apq = a[p, q]
            if abs(apq) < negligible:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = 1.0 / (abs(theta) + math.hypot(theta, 1.0))
            if theta < 0:
                t = -t
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            rotation = np.array([[c, -s], [s, c]])
            idx = [p, q]
            a[idx, :] = rotation @ a[idx, :]
            a[:, idx] = a[:, idx] @ rotation.T
            a[p, q] = 0.0
            a[q, p] = 0.0
            vectors[:, idx] = vectors[:, idx] @ rotation.T

    if _off_diagonal_norm(a) < threshold:
        return np.diag(a).copy(), vectors
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (n={n})")


def eig_sym(
    matrix,
    method: str = "auto",
    jacobi_max_n: int = JACOBI_MAX_N,
    dense_cap: int | None = None,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> SpectralDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    With method="auto", cyclic Jacobi handles matrices up to jacobi_max_n rows and
    larger ones go to LAPACK (numpy.linalg.eigh); pass method="jacobi" to force
    Jacobi at any size.

    Args:
        matrix: Dense array or SparseMatrix, symmetric within 1e-10 (relative to
            the largest entry when that exceeds 1).
        method: "jacobi", "lapack", or "auto" (Jacobi up to jacobi_max_n rows).
        jacobi_max_n: Size threshold used by "auto".
        dense_cap: Row cap; defaults to get_dense_cap().
        tol: Jacobi stops once the off-diagonal Frobenius norm is below
            tol * ||M||_F.
        max_sweeps: Jacobi sweep cap.

    Returns:
        SpectralDecomposition with ascending eigenvalues.
    """
    if isinstance(matrix, SparseMatrix):
        _check_dense_cap(matrix.n_rows, dense_cap)
        dense = matrix.to_dense()
    else:
        dense = as_dense(matrix)
    n_rows, n_cols = dense.shape
    if n_rows != n_cols:
        raise ShapeMismatchError(f"eigendecomposition needs a square matrix, got {dense.shape}")
    _check_dense_cap(n_rows, dense_cap)
    if n_rows == 0:
        return SpectralDecomposition(np.zeros(0), np.zeros((0, 0)))

    scale = max(1.0, float(np.max(np.abs(dense))))
    asymmetry = float(np.max(np.abs(dense - dense.T)))
    if asymmetry > SYMMETRY_TOL * scale:
        raise InvalidMatrixError(f"matrix is not symmetric (max |M - M^T| = {asymmetry:.3e})")
    symmetric = 0.5 * (dense + dense.T)

    if method == "auto":
        method = "jacobi" if n_rows <= jacobi_max_n else "lapack"
    if method == "jacobi":
        eigenvalues, eigenvectors = _jacobi_eigh(symmetric, tol, max_sweeps)
    elif method == "lapack":
        eigenvalues, eigenvectors = np.linalg.eigh(symmetric)
    else:
        raise ValueError(f"unknown eigensolver method: {method!r}")

    order = np.argsort(eigenvalues, kind="stable")
    return SpectralDecomposition(
        eigenvalues=eigenvalues[order],
        eigenvectors=np.ascontiguousarray(eigenvectors[:, order]),
    )


def gft(signal, decomposition: SpectralDecomposition) -> np.ndarray:
    """Graph Fourier transform x_hat = U^T x (vector or column matrix)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != decomposition.size:
        raise ShapeMismatchError(
            f"signal has {signal.shape[0]} entries, basis has {decomposition.size}"
        )
    return decomposition.eigenvectors.T @ signal


def inverse_gft(spectrum, decomposition: SpectralDecomposition) -> np.ndarray:
    """Inverse transform x = U x_hat."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape[0] != decomposition.size:
        raise ShapeMismatchError(
            f"spectrum has {spectrum.shape[0]} entries, basis has {decomposition.size}"
        )
    return decomposition.eigenvectors @ spectrum


def condition_number(matrix: SparseMatrix, epsilon: float) -> float:
    """Condition number of M + epsilon*I for a PSD matrix M.

    Returns (lambda_max + epsilon) / epsilon, or math.inf when epsilon = 0.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    decomposition = eig_sym(matrix)
    if decomposition.size and decomposition.eigenvalues[0] < -PSD_TOL:
        raise InvalidMatrixError(
            f"matrix is not PSD (lambda_min = {decomposition.eigenvalues[0]:.3e})"
        )
    if epsilon == 0:
        return math.inf
    lambda_max = max(float(decomposition.eigenvalues[-1]), 0.0) if decomposition.size else 0.0
    return (lambda_max + epsilon) / epsilon


def spectral_norm(matrix) -> float:
    """Largest singular value, computed with eig_sym.

    Symmetric inputs use max |lambda|; others use the smaller Gram matrix.
    """
    if isinstance(matrix, SparseMatrix):
        matrix = matrix.to_dense()
    dense = as_dense(matrix)
    if dense.size == 0:
        return 0.0
    n_rows, n_cols = dense.shape
    if n_rows == n_cols and np.array_equal(dense, dense.T):
        return float(np.max(np.abs(eig_sym(dense).eigenvalues)))
    gram = dense.T @ dense if n_cols <= n_rows else dense @ dense.T
    return math.sqrt(max(float(eig_sym(gram).eigenvalues[-1]), 0.0))


def max_row_norm(matrix) -> float:
    """r_1: the largest Euclidean row norm."""
    if isinstance(matrix, SparseMatrix):
        matrix = matrix.to_dense()
    dense = np.asarray(matrix, dtype=np.float64)
    if dense.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(dense, axis=1)))


def max_col_norm(matrix) -> float:
    """c_1: the largest Euclidean column norm."""
    if isinstance(matrix, SparseMatrix):
        matrix = matrix.to_dense()
    dense = np.asarray(matrix, dtype=np.float64)
    if dense.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(dense, axis=0)))
