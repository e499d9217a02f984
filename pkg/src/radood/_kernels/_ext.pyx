# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: batched Tyler fixed point and complex 1-D convolution.

Semantics match radood._kernels._numpy_impl exactly (up to round-off from
summation order); the numpy module is the reference implementation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline double _cabs2(double complex z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef int _cholesky(const double complex* S, double complex* L, double* ldiag,
                   Py_ssize_t m) noexcept nogil:
    """Lower Cholesky of Hermitian PD S (row-major). Returns 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double s
    cdef double complex c
    for j in range(m):
        s = S[j * m + j].real
        for k in range(j):
            s -= _cabs2(L[j * m + k])
        if s <= 0.0:
            return -1
        ldiag[j] = sqrt(s)
        L[j * m + j] = ldiag[j]
        for i in range(j + 1, m):
            c = S[i * m + j]
            for k in range(j):
                c -= L[i * m + k] * L[j * m + k].conjugate()
            L[i * m + j] = c / ldiag[j]
    return 0


cdef int _tyler_one(const double complex* Z, double complex* S,
                    double complex* L, double complex* Snew,
                    double complex* y, double* ldiag,
                    Py_ssize_t K, Py_ssize_t m, double tol, int max_iter,
                    double* resid_out) noexcept nogil:
    """Tyler iteration for one snapshot set; returns iterations or -1 on failure."""
    cdef Py_ssize_t i, j, k, n
    cdef int it
    cdef double q, w, tr, f, dnum, dden, resid
    cdef double complex c
    cdef const double complex* zk

    for i in range(m):
        for j in range(m):
            S[i * m + j] = 1.0 if i == j else 0.0

    resid = 0.0
    for it in range(1, max_iter + 1):
        if _cholesky(S, L, ldiag, m) != 0:
            return -1
        for i in range(m * m):
            Snew[i] = 0.0
        for n in range(K):
            zk = Z + n * m
            for i in range(m):
                c = zk[i]
                for k in range(i):
                    c -= L[i * m + k] * y[k]
                y[i] = c / ldiag[i]
            q = 0.0
            for i in range(m):
                q += _cabs2(y[i])
            if q < 1e-300:
                q = 1e-300
            w = (<double> m) / ((<double> K) * q)
            for i in range(m):
                for j in range(i + 1):
                    Snew[i * m + j] += w * zk[i] * zk[j].conjugate()
        tr = 0.0
        for i in range(m):
            tr += Snew[i * m + i].real
        f = (<double> m) / tr
        dnum = 0.0
        dden = 0.0
        for i in range(m):
            for j in range(i + 1):
                Snew[i * m + j] *= f
                if j < i:
                    Snew[j * m + i] = Snew[i * m + j].conjugate()
                    dnum += 2.0 * _cabs2(Snew[i * m + j] - S[i * m + j])
                    dden += 2.0 * _cabs2(S[i * m + j])
                else:
                    dnum += _cabs2(Snew[i * m + j] - S[i * m + j])
                    dden += _cabs2(S[i * m + j])
        resid = sqrt(dnum / dden)
        for i in range(m * m):
            S[i] = Snew[i]
        if resid < tol:
            break
    resid_out[0] = resid
    return it


def tyler_batch(Z, double tol, int max_iter):
    """Batched Tyler fixed point; see the numpy reference for the contract."""
    Z = np.ascontiguousarray(Z, dtype=np.complex128)
    cdef Py_ssize_t T = Z.shape[0]
    cdef Py_ssize_t K = Z.shape[1]
    cdef Py_ssize_t m = Z.shape[2]
    norms = np.linalg.norm(Z, axis=2, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero snapshot in secondary data")
    Zn = np.ascontiguousarray(Z / norms)

    sigma = np.empty((T, m, m), dtype=np.complex128)
    iters = np.zeros(T, dtype=np.int64)
    resid = np.empty(T, dtype=np.float64)
    scratch_L = np.zeros((m, m), dtype=np.complex128)
    scratch_S = np.zeros((m, m), dtype=np.complex128)
    scratch_y = np.zeros(m, dtype=np.complex128)
    scratch_d = np.zeros(m, dtype=np.float64)

    cdef double complex[:, :, ::1] zv = Zn
    cdef double complex[:, :, ::1] sv = sigma
    cdef cnp.int64_t[::1] iv = iters
    cdef double[::1] rv = resid
    cdef double complex[:, ::1] Lv = scratch_L
    cdef double complex[:, ::1] Sv = scratch_S
    cdef double complex[::1] yv = scratch_y
    cdef double[::1] dv = scratch_d

    cdef Py_ssize_t t
    cdef int rc
    cdef int fail = 0
    with nogil:
        for t in range(T):
            rc = _tyler_one(&zv[t, 0, 0], &sv[t, 0, 0], &Lv[0, 0], &Sv[0, 0],
                            &yv[0], &dv[0], K, m, tol, max_iter, &rv[t])
            if rc < 0:
                fail = 1
                break
            iv[t] = rc
    if fail:
        raise FloatingPointError("Tyler iterate lost positive definiteness")
    return sigma, iters, resid


def conv1d(x, w):
    """Complex conv1d, same padding, stride 1: (B,Ci,L) x (Co,Ci,K) -> (B,Co,L)."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.complex128)
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t Ci = x.shape[1]
    cdef Py_ssize_t L = x.shape[2]
    cdef Py_ssize_t Co = w.shape[0]
    cdef Py_ssize_t K = w.shape[2]
    cdef Py_ssize_t P = K // 2
    y = np.zeros((B, Co, L), dtype=np.complex128)

    cdef double complex[:, :, ::1] xv = x
    cdef double complex[:, :, ::1] wv = w
    cdef double complex[:, :, ::1] yv = y
    cdef Py_ssize_t b, o, i, k, l, lo, hi
    cdef double complex wc
    with nogil:
        for b in range(B):
            for o in range(Co):
                for i in range(Ci):
                    for k in range(K):
                        wc = wv[o, i, k]
                        if wc.real == 0.0 and wc.imag == 0.0:
                            continue
                        lo = P - k if P - k > 0 else 0
                        hi = L + P - k if L + P - k < L else L
                        for l in range(lo, hi):
                            yv[b, o, l] = yv[b, o, l] + wc * xv[b, i, l + k - P]
    return y


def conv1d_grad_w(x, g, Py_ssize_t K):
    """Weight gradient of conv1d: gw[o,i,k] = sum_{b,l} g[b,o,l] conj(x[b,i,l+k-P])."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    g = np.ascontiguousarray(g, dtype=np.complex128)
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t Ci = x.shape[1]
    cdef Py_ssize_t L = x.shape[2]
    cdef Py_ssize_t Co = g.shape[1]
    cdef Py_ssize_t P = K // 2
    gw = np.zeros((Co, Ci, K), dtype=np.complex128)

    cdef double complex[:, :, ::1] xv = x
    cdef double complex[:, :, ::1] gv = g
    cdef double complex[:, :, ::1] gwv = gw
    cdef Py_ssize_t b, o, i, k, l, lo, hi
    cdef double complex acc
    with nogil:
        for o in range(Co):
            for i in range(Ci):
                for k in range(K):
                    acc = 0.0
                    lo = P - k if P - k > 0 else 0
                    hi = L + P - k if L + P - k < L else L
                    for b in range(B):
                        for l in range(lo, hi):
                            acc = acc + gv[b, o, l] * xv[b, i, l + k - P].conjugate()
                    gwv[o, i, k] = acc
    return gw
