"""Pure-numpy implementations of the hot kernels.

These are the reference semantics for the compiled extension: both backends
must agree to round-off on identical inputs (see tests/test_kernels_parity).
"""

import numpy as np


def tyler_batch(Z, tol, max_iter):
    """Tyler fixed-point shape matrices for a batch of snapshot sets.

    Parameters
    ----------
    Z : (T, K, m) complex128
        T independent sets of K secondary snapshots.
    tol : float
        Relative Frobenius update below which a trial is converged.
    max_iter : int

    Returns
    -------
    sigma : (T, m, m) complex128, trace-normalized to m
    iters : (T,) int64, iterations actually run per trial
    resid : (T,) float64, last relative Frobenius update per trial

    Snapshots are normalized to unit norm up front; the fixed point is
    invariant to per-snapshot positive scaling so this only improves float
    behavior.  Iteration starts from the identity and trace-normalizes
    every step.
    """
    Z = np.ascontiguousarray(Z, dtype=np.complex128)
    T, K, m = Z.shape
    norms = np.linalg.norm(Z, axis=2, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero snapshot in secondary data")
    Zn = Z / norms

    sigma = np.broadcast_to(np.eye(m, dtype=np.complex128), (T, m, m)).copy()
    iters = np.zeros(T, dtype=np.int64)
    resid = np.full(T, np.inf, dtype=np.float64)
    active = np.arange(T)

    for _ in range(max_iter):
        if active.size == 0:
            break
        Za = Zn[active]
        inv = np.linalg.inv(sigma[active])
        q = np.einsum("tki,tij,tkj->tk", Za.conj(), inv, Za, optimize=True).real
        np.maximum(q, 1e-300, out=q)
        Wa = Za / np.sqrt(q)[:, :, None]
        new = (m / K) * np.einsum("tki,tkj->tij", Wa, Wa.conj(), optimize=True)
        tr = np.einsum("tii->t", new).real
        new *= (m / tr)[:, None, None]
        diff = np.linalg.norm((new - sigma[active]).reshape(len(active), -1), axis=1)
        ref = np.linalg.norm(sigma[active].reshape(len(active), -1), axis=1)
        r = diff / ref
        sigma[active] = new
        iters[active] += 1
        resid[active] = r
        active = active[r >= tol]

    return sigma, iters, resid


def conv1d(x, w):
    """Complex 1-D convolution with same padding, stride 1.

    x : (B, Ci, L), w : (Co, Ci, K) with K odd -> (B, Co, L).
    """
    x = np.ascontiguousarray(x, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.complex128)
    B, Ci, L = x.shape
    Co, Ci2, K = w.shape
    assert Ci == Ci2 and K % 2 == 1
    P = K // 2
    xp = np.zeros((B, Ci, L + K - 1), dtype=np.complex128)
    xp[:, :, P:P + L] = x
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (B, Ci, L, K)
    mat = cols.transpose(0, 2, 1, 3).reshape(B * L, Ci * K)
    y = mat @ w.reshape(Co, Ci * K).T
    return np.ascontiguousarray(y.reshape(B, L, Co).transpose(0, 2, 1))


def conv1d_grad_w(x, g, K):
    """Weight gradient of :func:`conv1d`: gw[o,i,k] = sum g[b,o,l] conj(x[b,i,l+k-P])."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    g = np.ascontiguousarray(g, dtype=np.complex128)
    B, Ci, L = x.shape
    Co = g.shape[1]
    P = K // 2
    xp = np.zeros((B, Ci, L + K - 1), dtype=np.complex128)
    xp[:, :, P:P + L] = x
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (B, Ci, L, K)
    mat = cols.transpose(0, 2, 1, 3).reshape(B * L, Ci * K)
    gm = g.transpose(1, 0, 2).reshape(Co, B * L)
    return (gm @ mat.conj()).reshape(Co, Ci, K)
