"""Compiled extension vs numpy fallback: identical semantics on shared inputs."""

import numpy as np
import pytest

from radood._kernels import backend_name, get_impl
from radood.simulate import draw_speckle

try:
    get_impl("ext")
    HAVE_EXT = True
except Exception:
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled extension not built")


def test_backend_reported():
    assert backend_name() in ("ext", "numpy")


@needs_ext
def test_tyler_batch_parity(rng):
    Z = np.stack([draw_speckle(0.5, 16, rng, n=32) for _ in range(50)])
    s1, i1, r1 = get_impl("numpy").tyler_batch(Z, 1e-10, 100)
    s2, i2, r2 = get_impl("ext").tyler_batch(Z, 1e-10, 100)
    assert np.abs(s1 - s2).max() < 1e-12
    assert np.array_equal(i1, i2)
    assert np.allclose(r1, r2, rtol=1e-6, atol=1e-13)


@needs_ext
def test_tyler_rejects_zero_snapshot(rng):
    Z = np.stack([draw_speckle(0.5, 8, rng, n=16) for _ in range(3)])
    Z[1, 4] = 0
    for name in ("numpy", "ext"):
        with pytest.raises(ValueError):
            get_impl(name).tyler_batch(Z, 1e-8, 50)


@needs_ext
def test_conv1d_parity(rng):
    x = rng.standard_normal((16, 3, 12)) + 1j * rng.standard_normal((16, 3, 12))
    w = rng.standard_normal((5, 3, 5)) + 1j * rng.standard_normal((5, 3, 5))
    y1 = get_impl("numpy").conv1d(x, w)
    y2 = get_impl("ext").conv1d(x, w)
    assert np.abs(y1 - y2).max() < 1e-12 * np.abs(y1).max()


@needs_ext
def test_conv1d_grad_w_parity(rng):
    x = rng.standard_normal((16, 3, 12)) + 1j * rng.standard_normal((16, 3, 12))
    g = rng.standard_normal((16, 5, 12)) + 1j * rng.standard_normal((16, 5, 12))
    g1 = get_impl("numpy").conv1d_grad_w(x, g, 5)
    g2 = get_impl("ext").conv1d_grad_w(x, g, 5)
    assert np.abs(g1 - g2).max() < 1e-12 * np.abs(g1).max()


def test_conv1d_against_direct_sum(rng):
    # Brute-force oracle for the active backend's convolution.
    from radood._kernels import conv1d
    x = rng.standard_normal((2, 2, 7)) + 1j * rng.standard_normal((2, 2, 7))
    w = rng.standard_normal((3, 2, 3)) + 1j * rng.standard_normal((3, 2, 3))
    y = conv1d(x, w)
    B, Ci, L = x.shape
    Co, _, K = w.shape
    P = K // 2
    for b in range(B):
        for o in range(Co):
            for l in range(L):
                acc = 0.0 + 0j
                for i in range(Ci):
                    for k in range(K):
                        t = l + k - P
                        if 0 <= t < L:
                            acc += w[o, i, k] * x[b, i, t]
                assert np.isclose(y[b, o, l], acc, atol=1e-12)
