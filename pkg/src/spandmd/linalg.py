"""Dense linear-algebra kernels used by the operator fits.

Everything here is a thin, contract-checked layer over LAPACK via numpy:
truncated SVD, ridge/pseudoinverse solves in the covariance formulation,
symmetric inverse square roots, matrix powers, and PCA projection.
All computation is float64.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .snapshot import DataMatrixPair

# singular values below REL_TOL * S[0] count as numerically zero
REL_TOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Reduced SVD factors ``A ~= U @ diag(S) @ V.T`` with descending S."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def effective_rank(self) -> int:
        return int(self.S.shape[0])


@dataclass(frozen=True)
class CovariancePair:
    """Input auto-covariance ``C = Z Z^T`` and cross-covariance ``T = Zp Z^T``."""

    C: np.ndarray
    T: np.ndarray
    alpha: float = 0.0


def covariances(pair: DataMatrixPair, alpha: float = 0.0) -> CovariancePair:
    Z, Zp = pair.Z, pair.Zp
    C = Z @ Z.T
    C = 0.5 * (C + C.T)  # symmetrize against rounding
    return CovariancePair(C=C, T=Zp @ Z.T, alpha=float(alpha))


def truncated_svd(A: np.ndarray, r: int, rel_tol: float = REL_TOL) -> SvdFactors:
    """Top-``min(r, numerical rank)`` SVD factors of a dense matrix.

    Singular values below ``rel_tol * S[0]`` are dropped; the retained count
    is reported through ``effective_rank``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        raise ValidationError("cannot decompose an empty matrix")
    if r < 1:
        raise ValidationError(f"target rank must be >= 1, got {r}")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    keep = min(r, S.shape[0])
    if S[0] > 0:
        keep = min(keep, int(np.sum(S > rel_tol * S[0])))
    keep = max(keep, 1) if S[0] > 0 else 1
    return SvdFactors(U=U[:, :keep], S=S[:keep], V=Vt[:keep].T)


def ridge_solve(pair: DataMatrixPair, alpha: float) -> np.ndarray:
    """Least-squares / ridge estimate ``K = T (C + alpha I)^{-1}``.

    At ``alpha = 0`` this is the pseudoinverse solution ``T C^+`` with the
    standard relative singular-value cutoff. When the sample count is small
    (``M <= 4d``) the solve runs on the SVD of Z directly instead of the
    ``d x d`` covariances, which is the better-conditioned route.
    """
    if alpha < 0:
        raise ValidationError(f"ridge penalty must be >= 0, got {alpha}")
    Z, Zp = pair.Z, pair.Zp
    d, M = Z.shape
    if M <= 4 * d:
        U, S, Vt = np.linalg.svd(Z, full_matrices=False)
        if alpha == 0:
            cutoff = REL_TOL * S[0] if S[0] > 0 else np.inf
            inv = np.where(S > cutoff, 1.0 / np.maximum(S, 1e-300), 0.0)
        else:
            inv = S / (S**2 + alpha)
        return (Zp @ Vt.T) * inv @ U.T
    cov = covariances(pair)
    lam, Q = np.linalg.eigh(cov.C)
    if alpha == 0:
        cutoff = REL_TOL**2 * lam[-1] if lam[-1] > 0 else np.inf
        inv = np.where(lam > cutoff, 1.0 / np.maximum(lam, 1e-300), 0.0)
    else:
        inv = 1.0 / (np.maximum(lam, 0.0) + alpha)
    return cov.T @ (Q * inv) @ Q.T


def inv_sqrt_psd(C: np.ndarray, alpha: float, atol: float = 1e-8) -> np.ndarray:
    """Symmetric ``(C + alpha I)^{-1/2}`` of a PSD matrix.

    Eigenvalues are clamped to zero before the shift, which absorbs the tiny
    negative eigenvalues PSD matrices acquire numerically.
    """
    C = np.asarray(C, dtype=np.float64)
    if alpha <= 0:
        raise ValidationError(f"shift must be > 0, got {alpha}")
    asym = np.abs(C - C.T).max() if C.size else 0.0
    if asym > atol:
        raise ValidationError(f"matrix is not symmetric: max|C - C.T| = {asym:.3e}")
    lam, Q = np.linalg.eigh(0.5 * (C + C.T))
    inv_sqrt = 1.0 / np.sqrt(np.maximum(lam, 0.0) + alpha)
    return (Q * inv_sqrt) @ Q.T


def matrix_power(K: np.ndarray, n: int) -> np.ndarray:
    """``K^n`` by binary exponentiation; ``n = 0`` gives the identity."""
    if n < 0:
        raise ValidationError(f"exponent must be >= 0, got {n}")
    return np.linalg.matrix_power(np.asarray(K, dtype=np.float64), n)


def pca_project(points: np.ndarray, k: int):
    """Center columns and project onto the top-k principal directions.

    Returns ``(coords, basis)`` where ``coords`` is ``k x N`` and ``basis``
    is ``d x k`` with orthonormal columns. Component signs are fixed so each
    basis vector's largest-magnitude entry is positive. If the centered
    matrix has rank below ``k`` the components are truncated with a warning.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2:
        raise ValidationError("points must be a d x N matrix")
    d, N = P.shape
    if N < 2:
        raise ValidationError(f"need at least 2 points, got {N}")
    if k < 1 or k > min(d, N):
        raise ValidationError(f"component count {k} out of range for {d} x {N} data")
    centered = P - P.mean(axis=1, keepdims=True)
    U, S, _ = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(S > REL_TOL * S[0])) if S[0] > 0 else 0
    if rank < k:
        warnings.warn(f"requested {k} components but centered rank is {rank}; truncating")
        k = max(rank, 1)
    basis = U[:, :k].copy()
    for j in range(k):
        lead = np.argmax(np.abs(basis[:, j]))
        if basis[lead, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis.T @ centered, basis
