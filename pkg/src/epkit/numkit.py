"""Dense matrix primitives shared by the decomposition solvers.

Everything here operates on plain 2-D float64 numpy arrays. Inputs are
validated for shape and finiteness once, at the boundary; the solvers built
on top assume clean data. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce *m* to a 2-D float64 array and validate finiteness."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of a D x T matrix.

    left: D x r with orthonormal columns, right: T x r with orthonormal
    columns, singular_values: length r, non-increasing and non-negative,
    with r = min(D, T). Reconstruction is left @ diag(s) @ right.T.
    """

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def svd(m) -> SvdFactors:
    """Thin singular value decomposition.

    Uses the divide-and-conquer LAPACK driver and falls back to the slower
    but more robust QR-based driver if it fails to converge.
    """
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except Exception as exc:
            raise RuntimeError(
                f"SVD did not converge for a {a.shape[0]}x{a.shape[1]} matrix"
            ) from exc
    return SvdFactors(left=u, singular_values=s, right=vt.T)


def soft_threshold(m, tau: float) -> np.ndarray:
    """Entrywise shrinkage sign(x) * max(|x| - tau, 0).

    Proximal operator of tau * ||vec(.)||_1; accepts arrays of any shape.
    """
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    a = np.asarray(m, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("soft_threshold input contains non-finite entries")
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def singular_value_threshold(m, tau: float) -> tuple[np.ndarray, int]:
    """Shrink the singular values of *m* by *tau*.

    Proximal operator of tau * (nuclear norm). Returns the shrunk matrix and
    the count of singular values strictly above tau.
    """
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    f = svd(m)
    shrunk = np.maximum(f.singular_values - tau, 0.0)
    rank = int(np.count_nonzero(f.singular_values > tau))
    return (f.left * shrunk) @ f.right.T, rank


def spectral_norm_estimate(m, tol: float = 1e-6, max_iterations: int = 10_000) -> float:
    """Largest singular value of *m* via power iteration on M^T M.

    The iterate starts at the largest column (plus a tiny deterministic mix
    so it is never orthogonal to the leading right singular vector); the
    Rayleigh quotient then increases monotonically toward sigma_1, so the
    returned value never exceeds the true norm and never falls below the
    largest column 2-norm by more than the tolerance.
    """
    a = as_matrix(m)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not np.any(a):
        raise ValueError("spectral norm estimate requires a nonzero matrix")
    n = a.shape[1]
    v = np.zeros(n)
    v[int(np.argmax(np.linalg.norm(a, axis=0)))] = 1.0
    v += 1e-6 * np.arange(1, n + 1) / n
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iterations):
        w = a @ v
        sigma_new = float(np.linalg.norm(w))
        if sigma_new == 0.0:
            return 0.0
        v = a.T @ w
        v /= np.linalg.norm(v)
        if abs(sigma_new - sigma) <= 0.25 * tol * sigma_new:
            return sigma_new
        sigma = sigma_new
    return sigma
