"""Tests for the sparse and dense kernels."""

import math

import numpy as np
import pytest

from sparse_sobolev_gnn.exceptions import (
    ConvergenceError,
    DenseCapError,
    InvalidMatrixError,
    ShapeMismatchError,
)
from sparse_sobolev_gnn.sparse_core import (
    SparseMatrix,
    add_scaled_identity,
    condition_number,
    eig_sym,
    gft,
    hadamard_power,
    identity,
    inverse_gft,
    kronecker,
    matrix_power_dense,
    max_col_norm,
    max_row_norm,
    partial_permutation,
    spectral_norm,
    spmm,
)


def _random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


class TestSparseMatrix:
    """Tests for the canonical CSR container."""

    def test_from_coo_sums_duplicates_and_drops_zeros(self):
        """Test that duplicate coordinates add up and zero entries vanish."""
        m = SparseMatrix.from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 0.0], shape=(2, 2))
        assert m.nnz == 1
        assert m.to_dense()[0, 1] == 3.0

    def test_from_dense_roundtrip(self):
        """Test dense -> CSR -> dense preserves the matrix."""
        dense = np.array([[0.0, 2.0, 0.0], [2.0, 0.0, 3.0], [0.0, 3.0, 0.0]])
        m = SparseMatrix.from_dense(dense)
        assert m.nnz == 4
        np.testing.assert_array_equal(m.to_dense(), dense)

    def test_rejects_unsorted_columns(self):
        """Test that column indices must increase within a row."""
        with pytest.raises(InvalidMatrixError):
            SparseMatrix(n_rows=2, n_cols=2, row_ptr=[0, 2, 2], col_idx=[1, 0], values=[1, 1])

    def test_rejects_explicit_zero(self):
        """Test that stored zeros violate canonical form."""
        with pytest.raises(InvalidMatrixError):
            SparseMatrix(n_rows=1, n_cols=1, row_ptr=[0, 1], col_idx=[0], values=[0.0])

    def test_rejects_bad_row_ptr(self):
        """Test that row_ptr must end at the number of entries."""
        with pytest.raises(InvalidMatrixError):
            SparseMatrix(n_rows=2, n_cols=2, row_ptr=[0, 1, 3], col_idx=[0, 1], values=[1, 1])

    def test_arrays_are_read_only(self):
        """Test that stored arrays cannot be modified in place."""
        m = identity(3)
        with pytest.raises(ValueError):
            m.values[0] = 5.0

    def test_symmetry_and_pattern(self, p3):
        """Test is_symmetric and same_pattern on a path graph."""
        a = p3.adjacency
        assert a.is_symmetric()
        assert a.same_pattern(hadamard_power(a, 3))
        assert not a.same_pattern(identity(3))
        assert a.transpose().same_pattern(a)

    def test_add_scaled_identity(self, p3):
        """Test that a positive shift adds the diagonal to the pattern."""
        shifted = add_scaled_identity(p3.adjacency, 0.5)
        assert shifted.nnz == 7
        np.testing.assert_array_equal(shifted.diagonal(), [0.5, 0.5, 0.5])
        assert add_scaled_identity(p3.adjacency, 0.0) is p3.adjacency


class TestHadamardPower:
    """Tests for the elementwise power."""

    def test_power_one_is_identity_on_operator(self):
        """Test [[0,2],[2,0]] to the first power."""
        m = SparseMatrix.from_dense([[0, 2], [2, 0]])
        np.testing.assert_array_equal(hadamard_power(m, 1).to_dense(), [[0, 2], [2, 0]])

    def test_identity_stays_identity(self):
        """Test that 1^rho = 1 keeps I unchanged."""
        np.testing.assert_array_equal(hadamard_power(identity(3), 5).to_dense(), np.eye(3))

    def test_square_keeps_pattern(self):
        """Test the elementwise square of a tridiagonal matrix."""
        m = SparseMatrix.from_dense([[0, 2, 0], [2, 0, 3], [0, 3, 0]])
        result = hadamard_power(m, 2)
        np.testing.assert_array_equal(result.to_dense(), [[0, 4, 0], [4, 0, 9], [0, 9, 0]])
        np.testing.assert_array_equal(result.row_ptr, m.row_ptr)
        np.testing.assert_array_equal(result.col_idx, m.col_idx)

    def test_rejects_power_zero(self):
        """Test that rho = 0 is left to the caller."""
        with pytest.raises(ValueError):
            hadamard_power(identity(2), 0)

    def test_underflow_raises(self):
        """Test that an entry underflowing to zero is reported."""
        m = SparseMatrix.from_dense([[1e-200, 0], [0, 1]])
        with pytest.raises(InvalidMatrixError):
            hadamard_power(m, 2)


class TestMatrixPowerDense:
    """Tests for the ordinary matrix power."""

    def test_path_laplacian_fills_in(self, p3):
        """Test that L^2 of P3 links the two end nodes."""
        power = matrix_power_dense(p3.laplacian(), 2)
        assert power[0, 2] == 1.0

    def test_power_one_densifies(self, random_er):
        """Test that rho = 1 returns the matrix itself."""
        a = random_er.adjacency
        np.testing.assert_array_equal(matrix_power_dense(a, 1), a.to_dense())

    def test_identity_power(self):
        """Test I^k = I."""
        np.testing.assert_array_equal(matrix_power_dense(identity(4), 3), np.eye(4))

    def test_dense_cap(self):
        """Test the explicit cap argument."""
        with pytest.raises(DenseCapError):
            matrix_power_dense(identity(5), 2, dense_cap=4)

    def test_dense_cap_from_environment(self, monkeypatch):
        """Test that S2GNN_DENSE_CAP overrides the default cap."""
        monkeypatch.setenv("S2GNN_DENSE_CAP", "3")
        with pytest.raises(DenseCapError):
            matrix_power_dense(identity(4), 2)


class TestSpmm:
    """Tests for sparse-dense products."""

    def test_identity(self, rng):
        """Test I H = H."""
        h = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(spmm(identity(4), h), h)

    def test_empty_pattern(self, rng):
        """Test that a matrix without entries gives zeros."""
        empty = SparseMatrix.from_coo([], [], [], shape=(3, 3))
        np.testing.assert_array_equal(spmm(empty, rng.standard_normal((3, 2))), np.zeros((3, 2)))

    def test_swap(self):
        """Test the permutation example against the dense product."""
        s = SparseMatrix.from_dense([[0, 1], [1, 0]])
        np.testing.assert_array_equal(spmm(s, [[1, 2], [3, 4]]), [[3, 4], [1, 2]])

    def test_vector_operand(self, p3):
        """Test a 1-D right-hand side."""
        np.testing.assert_allclose(spmm(p3.laplacian(), np.ones(3)), np.zeros(3))

    def test_matches_dense_product(self):
        """Test spmm against A @ X on 100 random sparse instances with N <= 20."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            width = int(rng.integers(1, 6))
            dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
            x = rng.standard_normal((n, width))
            result = spmm(SparseMatrix.from_dense(dense), x)
            np.testing.assert_allclose(result, dense @ x, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        """Test that inner dimensions must agree."""
        with pytest.raises(ShapeMismatchError):
            spmm(identity(3), np.ones((2, 2)))


class TestKronecker:
    """Tests for the dense Kronecker product and the selector matrix."""

    def test_identities(self):
        """Test I2 kron I2 = I4."""
        np.testing.assert_array_equal(kronecker(np.eye(2), np.eye(2)), np.eye(4))

    def test_scalar_left(self, rng):
        """Test [[1]] kron B = B."""
        b = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(kronecker([[1.0]], b), b)

    def test_block_layout(self):
        """Test the swap matrix against a 1x1 block."""
        np.testing.assert_array_equal(kronecker([[0, 1], [1, 0]], [[2]]), [[0, 2], [2, 0]])

    def test_cap(self):
        """Test that oversized products are rejected."""
        with pytest.raises(DenseCapError):
            kronecker(np.eye(3), np.eye(3), kron_cap=8)

    def test_partial_permutation_small(self):
        """Test the N = 1 and N = 2 selectors."""
        np.testing.assert_array_equal(partial_permutation(1).to_dense(), [[1.0]])
        p2 = partial_permutation(2).to_dense()
        assert p2.shape == (4, 2)
        np.testing.assert_array_equal(np.nonzero(p2)[0], [0, 3])
        np.testing.assert_array_equal(np.nonzero(p2)[1], [0, 1])

    def test_visick_identity(self):
        """Test S o T = P_N^T (S kron T) P_N on 100 random pairs with N in 2..6."""
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            s = rng.standard_normal((n, n))
            t = rng.standard_normal((n, n))
            selector = partial_permutation(n).to_dense()
            reconstructed = selector.T @ kronecker(s, t) @ selector
            assert np.max(np.abs(reconstructed - s * t)) < 1e-12, n


class TestEigSym:
    """Tests for the symmetric eigensolver."""

    def test_path_laplacian(self, p2):
        """Test the eigenvalues of the P2 Laplacian."""
        np.testing.assert_allclose(eig_sym(p2.laplacian()).eigenvalues, [0.0, 2.0], atol=1e-12)

    def test_identity_and_zero(self):
        """Test trivial spectra."""
        np.testing.assert_allclose(eig_sym(np.eye(3)).eigenvalues, [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(eig_sym(np.zeros((3, 3))).eigenvalues, np.zeros(3))

    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    def test_invariants(self, rng, method):
        """Test ordering, orthonormality and reconstruction for both solvers."""
        m = _random_symmetric(rng, 10)
        dec = eig_sym(m, method=method)
        assert np.all(np.diff(dec.eigenvalues) >= 0)
        u = dec.eigenvectors
        assert np.max(np.abs(u.T @ u - np.eye(10))) < 1e-8
        assert np.max(np.abs(dec.reconstruct() - m)) < 1e-7
        np.testing.assert_allclose(dec.eigenvalues, np.linalg.eigvalsh(m), atol=1e-9)

    def test_laplacian_spectrum_nonnegative(self, random_er):
        """Test that Laplacian eigenvalues are at least -1e-9 with a zero mode."""
        values = eig_sym(random_er.laplacian()).eigenvalues
        assert values[0] >= -1e-9
        assert abs(values[0]) < 1e-9

    def test_rejects_asymmetric(self):
        """Test that a non-symmetric matrix is refused."""
        with pytest.raises(InvalidMatrixError):
            eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_sweep_cap(self, rng):
        """Test that Jacobi reports non-convergence at the sweep cap."""
        with pytest.raises(ConvergenceError):
            eig_sym(_random_symmetric(rng, 5), method="jacobi", max_sweeps=0)

    def test_auto_switches_at_threshold(self, rng, monkeypatch):
        """Test that "auto" uses Jacobi up to jacobi_max_n rows and LAPACK above."""
        from sparse_sobolev_gnn import sparse_core

        calls = []
        original = sparse_core._jacobi_eigh

        def counting(matrix, tol, max_sweeps):
            calls.append(matrix.shape[0])
            return original(matrix, tol, max_sweeps)

        monkeypatch.setattr(sparse_core, "_jacobi_eigh", counting)
        eig_sym(_random_symmetric(rng, 4), jacobi_max_n=4)
        eig_sym(_random_symmetric(rng, 5), jacobi_max_n=4)
        eig_sym(_random_symmetric(rng, 5), method="jacobi", jacobi_max_n=4)
        assert calls == [4, 5]

    def test_unknown_method(self):
        """Test that an unknown solver name is rejected."""
        with pytest.raises(ValueError):
            eig_sym(np.eye(2), method="qr")


class TestSpectralHelpers:
    """Tests for transforms, norms and the condition number."""

    def test_gft_of_constant_signal(self, p3):
        """Test that a constant signal lives on the zero frequency."""
        dec = eig_sym(p3.laplacian())
        spectrum = gft(np.ones(3), dec)
        assert abs(abs(spectrum[0]) - math.sqrt(3)) < 1e-10
        np.testing.assert_allclose(spectrum[1:], 0.0, atol=1e-10)
        np.testing.assert_allclose(inverse_gft(spectrum, dec), np.ones(3), atol=1e-12)

    def test_gft_preserves_energy(self, random_er):
        """Test ||U^T x|| = ||x|| for random signals."""
        dec = eig_sym(random_er.laplacian())
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.standard_normal(random_er.n_nodes)
            assert abs(np.linalg.norm(gft(x, dec)) - np.linalg.norm(x)) < 1e-9

    def test_gft_round_trip(self, random_er):
        """Test that the inverse transform recovers random signals and signal matrices."""
        dec = eig_sym(random_er.laplacian())
        rng = np.random.default_rng(6)
        x = rng.standard_normal(random_er.n_nodes)
        np.testing.assert_allclose(inverse_gft(gft(x, dec), dec), x, atol=1e-9)
        block = rng.standard_normal((random_er.n_nodes, 3))
        np.testing.assert_allclose(inverse_gft(gft(block, dec), dec), block, atol=1e-9)

    def test_gft_dimension_mismatch(self, p3):
        """Test that the signal length must match the basis."""
        with pytest.raises(ShapeMismatchError):
            gft(np.ones(4), eig_sym(p3.laplacian()))

    def test_condition_number(self, p2):
        """Test (lambda_max + eps) / eps on P2."""
        assert condition_number(p2.laplacian(), 1.0) == pytest.approx(3.0)
        assert condition_number(p2.laplacian(), 0.0) == math.inf

    def test_condition_number_rejects_negative_definite(self, p2):
        """Test that a non-PSD input is refused."""
        negated = SparseMatrix.from_dense(-p2.laplacian().to_dense())
        with pytest.raises(InvalidMatrixError):
            condition_number(negated, 1.0)

    def test_spectral_norm(self):
        """Test symmetric and rectangular inputs."""
        assert spectral_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0)
        assert spectral_norm(np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])) == pytest.approx(4.0)

    def test_row_and_column_norms(self):
        """Test r_1 and c_1."""
        m = np.array([[3.0, 4.0], [0.0, 1.0]])
        assert max_row_norm(m) == pytest.approx(5.0)
        assert max_col_norm(m) == pytest.approx(math.sqrt(17.0))
