"""Dense complex linear algebra primitives shared by the whole package.

Everything here operates on plain numpy arrays (complex128).  Matrices are
small (snapshot length m, typically 16), so clarity wins over asymptotics;
the only concession is a cached unitary DFT matrix and an FFT fast path.
"""

from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError, SingularMatrixError

# Relative tolerance below which a matrix is accepted as Hermitian.
HERMITIAN_RTOL = 1e-12

# Lengths up to this bound use the explicit DFT matrix; longer vectors take
# the FFT fast path.  The two paths agree to ~1e-12 relative.
_DFT_DIRECT_MAX = 64


def is_hermitian(a, rtol=HERMITIAN_RTOL):
    """True if ``a`` equals its conjugate transpose within ``rtol``."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(np.abs(a).max(), 1e-300)
    return np.abs(a - a.conj().T).max() <= rtol * scale


def toeplitz(rho, m):
    """Correlation Toeplitz matrix with entry (i, j) equal to rho**|i-j|.

    Parameters
    ----------
    rho : float in [0, 1)
        One-lag correlation coefficient.
    m : int
        Matrix size, at least 1.

    Returns
    -------
    (m, m) complex128 ndarray, Hermitian positive definite.
    """
    if not 0.0 <= rho < 1.0:
        raise InvalidArgumentError(f"rho must lie in [0, 1), got {rho}")
    if m < 1:
        raise InvalidArgumentError(f"m must be a positive integer, got {m}")
    idx = np.arange(m)
    return (rho ** np.abs(idx[:, None] - idx[None, :])).astype(np.complex128)


def herm_inv_sqrt(a, floor=1e-12):
    """Inverse principal square root of a Hermitian PD matrix.

    Computed through an eigendecomposition with a relative eigenvalue floor
    (eigenvalues below ``floor * max(eig)`` are clamped) so that nearly
    singular ridge-regularized covariances remain invertible.  For a
    well-conditioned input B = herm_inv_sqrt(A) satisfies B @ A @ B = I to
    better than 1e-10 in relative Frobenius norm.
    """
    a = np.asarray(a, dtype=np.complex128)
    if floor <= 0:
        raise InvalidArgumentError(f"floor must be positive, got {floor}")
    if not is_hermitian(a):
        raise InvalidArgumentError("herm_inv_sqrt requires a Hermitian matrix")
    lam, u = np.linalg.eigh(a)
    lam_max = lam[-1]
    if lam_max < 1e-300:
        raise SingularMatrixError("all eigenvalues below 1e-300")
    lam = np.maximum(lam, floor * lam_max)
    b = (u * (1.0 / np.sqrt(lam))) @ u.conj().T
    # Re-symmetrize to kill round-off asymmetry from the two matmuls.
    return 0.5 * (b + b.conj().T)


@lru_cache(maxsize=32)
def dft_matrix(m):
    """Unitary DFT matrix of size m (cached)."""
    k = np.arange(m)
    w = np.exp(-2j * np.pi * np.outer(k, k) / m)
    return w / np.sqrt(m)


def _dft_direct(v):
    m = v.shape[-1]
    return v @ dft_matrix(m).T


def _dft_fft(v):
    m = v.shape[-1]
    return np.fft.fft(v, axis=-1) / np.sqrt(m)


def dft_unitary(v):
    """Unitary-normalized DFT along the last axis (1/sqrt(m) scaling).

    The unitary convention preserves the l2 norm, which is what keeps a
    whitened snapshot white after the Doppler transform.
    """
    v = np.asarray(v, dtype=np.complex128)
    m = v.shape[-1]
    if m == 0:
        raise InvalidArgumentError("dft_unitary requires a non-empty vector")
    if m <= _DFT_DIRECT_MAX:
        return _dft_direct(v)
    return _dft_fft(v)


def idft_unitary(v):
    """Inverse of :func:`dft_unitary`."""
    v = np.asarray(v, dtype=np.complex128)
    m = v.shape[-1]
    if m == 0:
        raise InvalidArgumentError("idft_unitary requires a non-empty vector")
    if m <= _DFT_DIRECT_MAX:
        return v @ dft_matrix(m).conj().T
    return np.fft.ifft(v, axis=-1) * np.sqrt(m)


def quad_form(a_inv, x, y):
    """Quadratic form x^H A_inv y.

    ``a_inv`` is the already-inverted matrix.  For x == y and PSD ``a_inv``
    the result is real nonnegative up to round-off.
    """
    a_inv = np.asarray(a_inv, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if a_inv.ndim != 2 or x.shape[-1] != a_inv.shape[0] or y.shape[-1] != a_inv.shape[1]:
        raise InvalidArgumentError(
            f"dimension mismatch: A_inv {a_inv.shape}, x {x.shape}, y {y.shape}")
    return complex(x.conj() @ a_inv @ y)
