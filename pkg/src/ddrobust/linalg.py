"""Dense numerical kernel: vec operators, spectra, SVD-based norms, Gaussian Q.

Everything here is a pure function over float64 arrays. The heavy
factorizations (eigendecomposition, SVD) are delegated to LAPACK through
numpy; failures surface as :class:`EigensolverError` instead of silent junk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Probability floor used when reporting values that underflow double
# precision (machine epsilon of float64).
EPS_FLOOR = 2.2e-16

_SQRT2 = math.sqrt(2.0)


class EigensolverError(RuntimeError):
    """Eigenvalue iteration failed to converge."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert input to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def vec(m) -> np.ndarray:
    """Column-stack a matrix into a 1-D vector."""
    return as_matrix(m, "vec argument").flatten(order="F")


def vec_inverse(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`: rebuild the rows x cols matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != rows * cols:
        raise ValueError(
            f"vector of length {v.size} cannot fill a {rows}x{cols} matrix"
        )
    return v.reshape((rows, cols), order="F")


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a square matrix plus diagonalizability diagnostics.

    ``kappa_v`` is the spectral condition number of the eigenvector matrix,
    finite only when the numerical diagonalization succeeded.
    """

    eigenvalues: np.ndarray
    spectral_radius: float
    diagonalizable: bool
    eigenvectors: np.ndarray
    kappa_v: float


def eigenvalues(m) -> Spectrum:
    """Full spectrum of a square matrix.

    Raises :class:`EigensolverError` if the underlying QR iteration does not
    converge; never returns partial results.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"eigenvalues requires a square matrix, got {m.shape}")
    try:
        vals, vecs = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigenvalue iteration failed: {exc}") from exc
    sv = np.linalg.svd(vecs, compute_uv=False)
    n = m.shape[0]
    # V numerically singular <=> defective (repeated eigenvalue, missing
    # eigenvector); kappa(V) is reported as inf in that case.
    nonsingular = sv[-1] > n * np.finfo(float).eps * sv[0]
    kappa_v = float(sv[0] / sv[-1]) if nonsingular else math.inf
    return Spectrum(
        eigenvalues=vals,
        spectral_radius=float(np.max(np.abs(vals))),
        diagonalizable=bool(nonsingular),
        eigenvectors=vecs,
        kappa_v=kappa_v,
    )


def spectral_radius(m) -> float:
    """max |lambda_i| of a square matrix."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral_radius requires a square matrix, got {m.shape}")
    try:
        vals = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(vals)))


def spectral_norm(m) -> float:
    """Largest singular value (Euclidean-induced norm)."""
    return float(np.linalg.svd(as_matrix(m), compute_uv=False)[0])


def condition_number_spectral(m) -> float:
    """sigma_max / sigma_min of a square matrix; inf when singular."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"condition number requires a square matrix, got {m.shape}")
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] == 0.0:
        return math.inf
    return float(sv[0] / sv[-1])


def pseudoinverse(m, rank_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD truncation.

    Singular values below ``rank_tol * sigma_max`` are treated as zero;
    the default tolerance is ``max(shape) * machine_eps``.
    """
    m = as_matrix(m)
    if rank_tol is None:
        rank_tol = max(m.shape) * np.finfo(float).eps
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    cutoff = rank_tol * s[0] if s.size else 0.0
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * s_inv) @ u.T


def matrix_rank_svd(m, rank_tol: float | None = None) -> int:
    """Numerical rank under the same truncation rule as :func:`pseudoinverse`."""
    m = as_matrix(m)
    if rank_tol is None:
        rank_tol = max(m.shape) * np.finfo(float).eps
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > rank_tol * s[0]))


def q_function(x: float) -> float:
    """Complementary CDF of the standard normal, Q(x) = 0.5 erfc(x / sqrt 2)."""
    if math.isnan(x):
        raise ValueError("q_function is undefined for NaN")
    return 0.5 * math.erfc(x / _SQRT2)
