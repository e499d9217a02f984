"""Closed-form detection statistics and their adaptive plug-in versions.

Statistics operate in the slow-time domain on snapshots z with steering
p(d, m); running them pre- or post-DFT is equivalent because the DFT is
unitary, and pre-DFT matches the defining formulas literally.

    MF(z)  = |p^H S^{-1} z|^2 / (p^H S^{-1} p)
    NMF(z) = |p^H S^{-1} z|^2 / ((p^H S^{-1} p)(z^H S^{-1} z))  in [0, 1]

Adaptive versions insert an estimated covariance: AMF/ANMF with the SCM,
ANMF-Tyler with the Tyler fixed point.
"""

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceEstimate
from .errors import InvalidArgumentError, SingularMatrixError

MF = "MF"
NMF = "NMF"
AMF_SCM = "AMF-SCM"
ANMF_SCM = "ANMF-SCM"
ANMF_TYLER = "ANMF-Tyler"

CLASSICAL_KINDS = (MF, NMF)
ADAPTIVE_KINDS = (AMF_SCM, ANMF_SCM, ANMF_TYLER)

_DEGENERATE = 1e-300


@dataclass
class DetectorStatistic:
    value: float
    detector_kind: str
    d: int = None


def mf_stat(z, p, sigma_inv):
    """Matched filter statistic |p^H S^{-1} z|^2 / (p^H S^{-1} p)."""
    z = np.asarray(z, dtype=np.complex128)
    p = np.asarray(p, dtype=np.complex128)
    sigma_inv = np.asarray(sigma_inv, dtype=np.complex128)
    if z.shape != p.shape or sigma_inv.shape != (p.size, p.size):
        raise InvalidArgumentError("mf_stat: non-conformable arguments")
    w = sigma_inv @ p
    den = (p.conj() @ w).real
    if den < _DEGENERATE:
        raise SingularMatrixError(f"degenerate steering norm p^H S^-1 p = {den}")
    return float(np.abs(w.conj() @ z) ** 2 / den)


def nmf_stat(z, p, sigma_inv):
    """Normalized matched filter, scale-invariant, in [0, 1]."""
    z = np.asarray(z, dtype=np.complex128)
    p = np.asarray(p, dtype=np.complex128)
    sigma_inv = np.asarray(sigma_inv, dtype=np.complex128)
    if z.shape != p.shape or sigma_inv.shape != (p.size, p.size):
        raise InvalidArgumentError("nmf_stat: non-conformable arguments")
    if not np.any(z):
        raise InvalidArgumentError("nmf_stat: z must be nonzero")
    wp = sigma_inv @ p
    wz = sigma_inv @ z
    den_p = (p.conj() @ wp).real
    den_z = (z.conj() @ wz).real
    if den_p < _DEGENERATE or den_z < _DEGENERATE:
        raise SingularMatrixError("degenerate quadratic form in NMF denominator")
    val = float(np.abs(wp.conj() @ z) ** 2 / (den_p * den_z))
    assert val <= 1.0 + 1e-9, f"NMF exceeded 1 beyond round-off: {val}"
    return min(max(val, 0.0), 1.0)


def adaptive_stat(kind, z, p, est):
    """MF or NMF statistic with a plug-in covariance estimate.

    ``est`` may be a CovarianceEstimate or a plain Hermitian PD matrix
    (ridge-regularize first if it might be rank deficient).
    """
    if kind not in CLASSICAL_KINDS + ADAPTIVE_KINDS:
        raise InvalidArgumentError(f"unknown detector kind {kind!r}")
    mat = est.matrix if isinstance(est, CovarianceEstimate) else np.asarray(est)
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"covariance estimate not invertible: {exc}") from exc
    if kind in (MF, AMF_SCM):
        value = mf_stat(z, p, inv)
    else:
        value = nmf_stat(z, p, inv)
    return DetectorStatistic(value=value, detector_kind=kind)


# ---------------------------------------------------------------------------
# Batched evaluation used by the Monte Carlo engine.  Shapes:
#   Z (T, m) snapshots, P (B, m) steering rows, inv (m, m) shared or
#   (T, m, m) per trial.  Outputs are (T, B) float64.
# ---------------------------------------------------------------------------

def steering_norms(P, inv):
    """den_p[.., b] = p_b^H inv p_b: (B,) for shared inv, (T, B) per trial."""
    if inv.ndim == 2:
        return np.einsum("bi,ij,bj->b", P.conj(), inv, P, optimize=True).real
    return np.einsum("bi,tij,bj->tb", P.conj(), inv, P, optimize=True).real


def mf_nmf_from_inv(Z, P, inv, den_p=None):
    """MF and NMF statistics given an explicit inverse covariance.

    den_p may be passed in when the same inverse serves many snapshot
    batches (the Pd sweep shares it across the whole SNR grid).
    Returns (mf, nmf, den_p).
    """
    if den_p is None:
        den_p = steering_norms(P, inv)
    if inv.ndim == 2:
        sol_z = Z @ inv.T
    else:
        sol_z = np.einsum("tij,tj->ti", inv, Z, optimize=True)
    cross = sol_z @ P.conj().T
    den_z = np.einsum("ti,ti->t", Z.conj(), sol_z).real
    mf = np.abs(cross) ** 2 / (den_p if den_p.ndim == 2 else den_p[None, :])
    nmf = mf / den_z[:, None]
    return mf, np.clip(nmf, 0.0, 1.0), den_p


def mf_nmf_known_cov(Z, P, sigma):
    """MF and NMF for all trials and steering bins under a shared covariance."""
    Z = np.asarray(Z, dtype=np.complex128)
    P = np.asarray(P, dtype=np.complex128)
    inv = np.linalg.inv(np.asarray(sigma, dtype=np.complex128))
    mf, nmf, _ = mf_nmf_from_inv(Z, P, inv)
    return mf, nmf


def mf_nmf_per_cov(Z, P, sigmas):
    """MF and NMF with a per-trial covariance (T, m, m)."""
    Z = np.asarray(Z, dtype=np.complex128)
    P = np.asarray(P, dtype=np.complex128)
    inv = np.linalg.inv(np.asarray(sigmas, dtype=np.complex128))
    mf, nmf, _ = mf_nmf_from_inv(Z, P, inv)
    return mf, nmf
