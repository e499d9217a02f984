"""Finite-difference validation of every autodiff rule.

Each op is embedded in a small real-valued loss; the packed gradients are
compared against central differences on the split real/imaginary
coordinates, which is the convention the tape claims to implement.
"""

import numpy as np
import pytest

from radood.cvae import autodiff as ad


def fd_check(build_loss, arrays, h=1e-6, tol=1e-6):
    """Max relative error between tape gradients and central differences.

    build_loss(vars) -> loss Var; arrays are the leaf values (complex or
    real), mutated in place for the FD probes.
    """
    leaves = [ad.Var(a, requires_grad=True) for a in arrays]
    loss = build_loss(leaves)
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        flat = (leaf.value.view(np.float64).ravel()
                if np.iscomplexobj(leaf.value) else leaf.value.ravel())
        grad = (np.ascontiguousarray(leaf.grad).view(np.float64).ravel()
                if np.iscomplexobj(leaf.value) else leaf.grad.ravel())
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(build_loss(leaves).value)
            flat[i] = old - h
            fm = float(build_loss(leaves).value)
            flat[i] = old
            fd = (fp - fm) / (2 * h)
            err = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-3)
            worst = max(worst, err)
    assert worst < tol, f"max relative gradient error {worst}"
    return worst


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestElementwiseRules:
    def test_mul_complex(self, rng):
        a, b = crandn(rng, 3, 4), crandn(rng, 3, 4)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.mul(v[0], v[1]))), [a, b])

    def test_mul_mixed_real_complex(self, rng):
        a = rng.standard_normal((3, 4))
        b = crandn(rng, 3, 4)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.mul(v[0], v[1]))), [a, b])

    def test_scale_by_complex_constant(self, rng):
        a = crandn(rng, 5)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.scale(v[0], 0.7 - 1.3j))), [a])

    def test_div_by_real(self, rng):
        a = crandn(rng, 4)
        b = rng.uniform(0.5, 2.0, 4)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.div(v[0], v[1]))), [a, b])

    def test_abs_and_sqrt_and_log(self, rng):
        a = crandn(rng, 6) + 3.0  # keep |a| away from the modulus kink
        fd_check(lambda v: ad.sum_(ad.log(ad.sqrt(ad.cabs(v[0])))), [a])

    def test_softplus(self, rng):
        a = rng.standard_normal(7)
        fd_check(lambda v: ad.sum_(ad.mul(ad.softplus(v[0]), ad.softplus(v[0]))), [a])

    def test_real_part(self, rng):
        a = crandn(rng, 5)
        fd_check(lambda v: ad.sum_(ad.mul(ad.real_part(v[0]), ad.real_part(v[0]))), [a])

    def test_broadcasting_unbroadcast(self, rng):
        a = crandn(rng, 4, 1)
        b = crandn(rng, 4, 5)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.add(v[0], v[1]))), [a, b])

    def test_mean_axis_keepdims(self, rng):
        a = crandn(rng, 3, 6)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.sub(v[0], ad.mean(v[0], axis=1,
                                                                keepdims=True)))), [a])


class TestLayerRules:
    def test_dense(self, rng):
        x = crandn(rng, 4, 6)
        w = crandn(rng, 3, 6) * 0.5
        b = crandn(rng, 3) * 0.1
        fd_check(lambda v: ad.sum_(ad.abs2(ad.dense(v[0], v[1], v[2]))), [x, w, b])

    def test_conv1d(self, rng):
        x = crandn(rng, 2, 3, 8)
        w = crandn(rng, 4, 3, 5) * 0.3
        b = crandn(rng, 4) * 0.1
        fd_check(lambda v: ad.sum_(ad.abs2(ad.conv1d(v[0], v[1], v[2]))), [x, w, b])

    def test_conv1d_matches_direct_convolution(self, rng):
        x = crandn(rng, 1, 2, 6)
        w = crandn(rng, 3, 2, 3)
        y = ad.conv1d(ad.lift(x), ad.lift(w)).value
        P = 1
        for o in range(3):
            for l in range(6):
                acc = 0
                for i in range(2):
                    for k in range(3):
                        t = l + k - P
                        if 0 <= t < 6:
                            acc += w[o, i, k] * x[0, i, t]
                assert np.isclose(y[0, o, l], acc, atol=1e-12)

    def test_modrelu(self, rng):
        x = crandn(rng, 2, 3, 4)
        b = rng.uniform(-0.5, 0.5, 3)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.modrelu(v[0], v[1]))), [x, b])

    def test_modrelu_zero_maps_to_zero(self):
        x = np.zeros((1, 2, 3), complex)
        out = ad.modrelu(ad.lift(x), ad.lift(np.array([0.5, -0.5]))).value
        assert np.array_equal(out, np.zeros_like(x))

    def test_modrelu_preserves_phase(self, rng):
        x = crandn(rng, 1, 2, 8)
        out = ad.modrelu(ad.lift(x), ad.lift(np.array([0.3, -0.1]))).value
        active = out != 0
        assert np.allclose(np.angle(out[active]), np.angle(x[active]), atol=1e-12)

    def test_crelu(self, rng):
        x = crandn(rng, 2, 3, 4)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.crelu(v[0]))), [x])

    def test_crelu_zero_maps_to_zero(self):
        out = ad.crelu(ad.lift(np.zeros((1, 2), complex))).value
        assert np.array_equal(out, np.zeros((1, 2), complex))

    def test_maxpool_mod(self, rng):
        x = crandn(rng, 2, 3, 8)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.maxpool_mod(v[0], 2))), [x])

    def test_maxpool_gathers_complex_value(self):
        x = np.array([[[1 + 1j, -3 + 0j, 0.5j, 0.1]]])
        out = ad.maxpool_mod(ad.lift(x), 2).value
        assert out[0, 0, 0] == -3 + 0j
        assert out[0, 0, 1] == 0.5j

    def test_upsample_repeat(self, rng):
        x = crandn(rng, 2, 3, 4)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.upsample_repeat(v[0], 2))), [x])

    def test_channel_norm(self, rng):
        # FD through the sqrt/div composition is noisier; 5e-5 is still far
        # below anything a wrong rule would produce.
        x = crandn(rng, 2, 3, 8)
        g = crandn(rng, 3)
        fd_check(lambda v: ad.sum_(ad.abs2(ad.channel_norm(v[0], v[1]))), [x, g],
                 tol=5e-5)


class TestTapeMechanics:
    def test_diamond_graph_accumulates(self, rng):
        a = ad.Var(rng.standard_normal(4), requires_grad=True)
        b = ad.mul(a, a)
        loss = ad.sum_(ad.add(b, b))
        loss.backward()
        assert np.allclose(a.grad, 4 * a.value)

    def test_backward_requires_real_scalar(self, rng):
        v = ad.Var(crandn(rng, 3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.sum_(v).backward()

    def test_no_grad_builds_no_graph(self, rng):
        a = ad.Var(rng.standard_normal(3), requires_grad=True)
        with ad.no_grad():
            out = ad.mul(a, a)
        assert not out.requires_grad
        assert out._parents == ()

    def test_constants_have_no_grad(self, rng):
        a = ad.Var(rng.standard_normal(3), requires_grad=True)
        out = ad.sum_(ad.mul(a, ad.lift(np.ones(3))))
        out.backward()
        assert np.allclose(a.grad, 1.0)
