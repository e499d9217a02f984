"""Covariance estimation from secondary data: SCM, Tyler fixed point, ridge.

The Tyler fixed point solves

    Sigma = (m/K) * sum_k z_k z_k^H / (z_k^H Sigma^{-1} z_k)

which pins Sigma only up to a positive scale; the trace-m normalization
applied at every iteration makes the output unique.  The ANMF statistic is
invariant to that choice, which is what makes ANMF-Tyler well posed.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import tyler_batch as _tyler_batch_kernel
from .errors import ConvergenceError, InvalidArgumentError

SCM_KIND = "SCM"
TYLER_KIND = "TylerFP"
ORACLE_KIND = "Oracle"
RIDGE_KIND = "RidgeRegularized"

TYLER_TOL = 1e-10
TYLER_MAX_ITER = 100


@dataclass
class CovarianceEstimate:
    """Hermitian PSD estimate plus provenance."""

    matrix: np.ndarray
    kind: str
    k_samples: int = 0


def _as_snapshot_matrix(Z):
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise InvalidArgumentError("expected a nonempty list of equal-length snapshots")
    return Z


def scm(Z):
    """Sample covariance (1/K) sum z_k z_k^H of K snapshots (rows of Z)."""
    Z = _as_snapshot_matrix(Z)
    K = Z.shape[0]
    mat = Z.T @ Z.conj() / K
    return CovarianceEstimate(matrix=mat, kind=SCM_KIND, k_samples=K)


def ridge_regularize(R, eps_ridge):
    """R + eps_ridge * (tr(R)/m) * I, the diagonal-loading regularizer."""
    if eps_ridge <= 0:
        raise InvalidArgumentError(f"eps_ridge must be positive, got {eps_ridge}")
    R = np.asarray(R, dtype=np.complex128)
    m = R.shape[0]
    tr = np.trace(R).real
    return R + (eps_ridge * tr / m) * np.eye(m)


def tyler_fp(Z, tol=TYLER_TOL, max_iter=TYLER_MAX_ITER):
    """Tyler fixed-point shape matrix from K > m secondary snapshots.

    Iterates from the identity with trace-m normalization each step and
    stops once the relative Frobenius update falls below ``tol``.  Raises
    ConvergenceError (carrying the last residual) if ``max_iter`` is hit
    first.  Scale invariant at the snapshot level: scaling any z_k by a
    positive constant leaves the output unchanged.
    """
    Z = _as_snapshot_matrix(Z)
    K, m = Z.shape
    if np.any(np.linalg.norm(Z, axis=1) == 0):
        raise InvalidArgumentError("zero snapshot in secondary data")
    if K <= m:
        raise InvalidArgumentError(
            f"Tyler fixed point needs K > m snapshots, got K={K}, m={m}")
    sigma, iters, resid = _tyler_batch_kernel(Z[None, :, :], tol, max_iter)
    if resid[0] >= tol:
        raise ConvergenceError(
            f"Tyler fixed point did not reach tol={tol} in {max_iter} iterations "
            f"(last residual {resid[0]:.3e})",
            residual=float(resid[0]), iterations=int(iters[0]))
    return CovarianceEstimate(matrix=sigma[0], kind=TYLER_KIND, k_samples=K)


def tyler_residuals(Z, n_iter):
    """Relative Frobenius update at each Tyler iteration (diagnostic)."""
    Z = _as_snapshot_matrix(Z)
    K, m = Z.shape
    Zn = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    sigma = np.eye(m, dtype=np.complex128)
    out = []
    for _ in range(n_iter):
        q = np.einsum("ki,ij,kj->k", Zn.conj(), np.linalg.inv(sigma), Zn).real
        W = Zn / np.sqrt(q)[:, None]
        new = (m / K) * (W.T @ W.conj())
        new *= m / np.trace(new).real
        out.append(np.linalg.norm(new - sigma) / np.linalg.norm(sigma))
        sigma = new
    return np.asarray(out)


def tyler_fp_batch(Z, tol=TYLER_TOL, max_iter=TYLER_MAX_ITER):
    """Batched Tyler fixed point over (T, K, m) snapshot sets.

    Returns (sigma, iters, resid) without raising on slow trials; Monte
    Carlo callers decide how to treat rare unconverged fits.
    """
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim != 3 or Z.shape[1] <= Z.shape[2]:
        raise InvalidArgumentError("expected (T, K, m) snapshots with K > m")
    return _tyler_batch_kernel(Z, tol, max_iter)
