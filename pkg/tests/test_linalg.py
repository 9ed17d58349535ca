import numpy as np
import pytest

from spandmd.errors import ValidationError
from spandmd.linalg import (
    inv_sqrt_psd,
    matrix_power,
    pca_project,
    ridge_solve,
    truncated_svd,
)
from spandmd.snapshot import DataMatrixPair


def linear_pair(d=4, M=100, rho=0.9, seed=0):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((d, d))
    K *= rho / np.abs(np.linalg.eigvals(K)).max()
    Z = rng.standard_normal((d, M))
    return DataMatrixPair(Z, K @ Z), K


class TestTruncatedSvd:
    def test_identity(self):
        f = truncated_svd(np.eye(3), 3)
        assert np.allclose(f.S, [1.0, 1.0, 1.0])
        assert f.effective_rank == 3

    def test_rank_one_outer_product(self):
        u = np.array([2.0, 0.0, 0.0])
        v = np.array([0.0, 3.0])
        f = truncated_svd(np.outer(u, v), 2)
        assert f.effective_rank == 1
        assert np.allclose(f.S, [6.0])

    def test_reconstruction(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((8, 20))
        f = truncated_svd(A, 8)
        recon = f.U @ np.diag(f.S) @ f.V.T
        assert np.linalg.norm(recon - A) <= 1e-10 * np.linalg.norm(A)

    def test_orthonormal_factors(self):
        rng = np.random.default_rng(2)
        f = truncated_svd(rng.standard_normal((6, 30)), 4)
        assert np.allclose(f.U.T @ f.U, np.eye(4), atol=1e-10)
        assert np.allclose(f.V.T @ f.V, np.eye(4), atol=1e-10)
        assert np.all(np.diff(f.S) <= 0)

    def test_empty_matrix(self):
        with pytest.raises(ValidationError):
            truncated_svd(np.zeros((0, 3)), 1)


class TestRidgeSolve:
    def test_identity_dynamics(self):
        pair = DataMatrixPair(np.eye(2), np.eye(2))
        assert np.allclose(ridge_solve(pair, 0.0), np.eye(2))

    def test_exact_recovery(self):
        pair, K = linear_pair(d=4, M=100)
        assert np.abs(ridge_solve(pair, 0.0) - K).max() <= 1e-8

    def test_shrinkage(self):
        pair, K = linear_pair(d=4, M=100)
        K10 = ridge_solve(pair, 10.0)
        assert np.linalg.norm(K10) < np.linalg.norm(K)

    def test_monotone_shrinkage(self):
        pair, _ = linear_pair(d=5, M=60, seed=3)
        alphas = [0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0]
        norms = [np.linalg.norm(ridge_solve(pair, a)) for a in alphas]
        assert all(n1 >= n2 - 1e-12 for n1, n2 in zip(norms, norms[1:]))

    def test_covariance_and_svd_routes_agree(self):
        # M > 4d takes the covariance route; check both give the same map
        rng = np.random.default_rng(4)
        d = 6
        K = rng.standard_normal((d, d)) * 0.3
        Z_small = rng.standard_normal((d, 3 * d))
        Z_big = rng.standard_normal((d, 10 * d))
        for alpha in (0.0, 1e-4):
            small = ridge_solve(DataMatrixPair(Z_small, K @ Z_small), alpha)
            big = ridge_solve(DataMatrixPair(Z_big, K @ Z_big), alpha)
            assert np.abs(small - K).max() < 1e-6 + alpha
            assert np.abs(big - K).max() < 1e-6 + alpha

    def test_negative_alpha_rejected(self):
        pair, _ = linear_pair()
        with pytest.raises(ValidationError):
            ridge_solve(pair, -1.0)


class TestInvSqrtPsd:
    def test_zero_matrix(self):
        out = inv_sqrt_psd(np.zeros((3, 3)), 4.0)
        assert np.allclose(out, 0.5 * np.eye(3))

    def test_diagonal(self):
        out = inv_sqrt_psd(np.diag([3.0, 0.0]), 1.0)
        assert np.allclose(out, np.diag([0.5, 1.0]))

    def test_defining_identity(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((6, 12))
        C = A @ A.T
        alpha = 0.7
        M = inv_sqrt_psd(C, alpha)
        assert np.abs(M @ (C + alpha * np.eye(6)) @ M - np.eye(6)).max() <= 1e-8

    def test_commutes_with_shifted_matrix(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((5, 9))
        C = A @ A.T
        M = inv_sqrt_psd(C, 0.3)
        S = C + 0.3 * np.eye(5)
        assert np.abs(M @ S - S @ M).max() <= 1e-8

    def test_asymmetry_rejected(self):
        C = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(ValidationError):
            inv_sqrt_psd(C, 1.0)

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(ValidationError):
            inv_sqrt_psd(np.eye(2), 0.0)


class TestMatrixPower:
    def test_zero_exponent(self):
        rng = np.random.default_rng(7)
        K = rng.standard_normal((4, 4))
        assert np.array_equal(matrix_power(K, 0), np.eye(4))

    def test_diagonal_powers(self):
        assert np.allclose(matrix_power(np.diag([2.0, 3.0]), 5), np.diag([32.0, 243.0]))

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(8)
        K = rng.standard_normal((5, 5)) * 0.5
        naive = np.eye(5)
        for _ in range(7):
            naive = naive @ K
        fast = matrix_power(K, 7)
        assert np.abs(fast - naive).max() <= 1e-9 * max(np.abs(naive).max(), 1.0)

    def test_power_addition(self):
        rng = np.random.default_rng(9)
        K = rng.standard_normal((4, 4)) * 0.6
        for a, b in [(2, 3), (0, 7), (5, 5), (1, 10)]:
            lhs = matrix_power(K, a + b)
            rhs = matrix_power(K, a) @ matrix_power(K, b)
            scale = max(np.abs(lhs).max(), 1e-30)
            assert np.abs(lhs - rhs).max() <= 1e-9 * scale

    def test_negative_exponent_rejected(self):
        with pytest.raises(ValidationError):
            matrix_power(np.eye(2), -1)


class TestPcaProject:
    def test_colinear_points(self):
        pts = np.zeros((3, 5))
        pts[0] = np.arange(5.0)
        coords, basis = pca_project(pts, 1)
        centered = pts - pts.mean(axis=1, keepdims=True)
        total = np.sum(centered**2)
        explained = np.sum(coords**2)
        assert explained / total >= 1.0 - 1e-12

    def test_symmetric_pair(self):
        v = np.array([3.0, 4.0])
        pts = np.stack([v, -v], axis=1)
        coords, _ = pca_project(pts, 1)
        assert np.allclose(sorted(coords.ravel()), [-5.0, 5.0])

    def test_eckart_young(self):
        # reconstruction error from k components equals the tail singular values
        rng = np.random.default_rng(10)
        pts = rng.standard_normal((6, 9))
        k = 2
        coords, basis = pca_project(pts, k)
        centered = pts - pts.mean(axis=1, keepdims=True)
        recon_err = np.sum((centered - basis @ coords) ** 2)
        s = np.linalg.svd(centered, compute_uv=False)
        assert abs(recon_err - np.sum(s[k:] ** 2)) <= 1e-10 * np.sum(s**2)

    def test_sign_convention(self):
        rng = np.random.default_rng(11)
        pts = rng.standard_normal((4, 7))
        _, basis = pca_project(pts, 3)
        for j in range(basis.shape[1]):
            lead = np.argmax(np.abs(basis[:, j]))
            assert basis[lead, j] > 0

    def test_rank_deficient_warns(self):
        pts = np.zeros((3, 4))
        pts[0] = [1.0, 2.0, 3.0, 4.0]
        with pytest.warns(UserWarning, match="truncating"):
            coords, basis = pca_project(pts, 2)
        assert basis.shape[1] == 1
