import numpy as np
import pytest

from radood.errors import InvalidArgumentError
from radood.linalg import dft_unitary, toeplitz
from radood.simulate import (DisturbanceSpec, RangePulseCube, TargetSpec,
                             draw_disturbance, draw_speckle, inject_target,
                             simulate_cube, steering, substream)


def scm_of(Z):
    return Z.T @ Z.conj() / Z.shape[0]


class TestSteering:
    def test_zero_doppler_all_ones(self):
        assert np.allclose(steering(0, 4), np.ones(4))

    def test_half_band_alternates(self):
        assert np.allclose(steering(2, 4), [1, -1, 1, -1], atol=1e-15)

    @pytest.mark.parametrize("d,m", [(0, 4), (3, 16), (15, 16), (7, 8)])
    def test_squared_norm_is_m(self, d, m):
        p = steering(d, m)
        assert np.isclose(np.vdot(p, p).real, m)

    def test_bin_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            steering(4, 4)


class TestDrawDisturbance:
    def test_cgn_sample_covariance(self, rng):
        spec = DisturbanceSpec(kind="cGN", rho=0.5, m=16)
        Z = draw_disturbance(spec, rng, n=1_000_000)
        t = toeplitz(0.5, 16)
        err = np.linalg.norm(scm_of(Z) - t) / np.linalg.norm(t)
        assert err < 0.02

    def test_ccgn_unit_marginal_power(self, rng):
        spec = DisturbanceSpec(kind="cCGN", rho=0.5, mu_texture=1.0, m=16)
        Z = draw_disturbance(spec, rng, n=1_000_000)
        assert np.isclose(np.mean(np.abs(Z) ** 2), 1.0, rtol=0.02)

    def test_texture_mean_one(self, rng):
        for mu in (0.2, 1.0, 5.0):
            tau = rng.gamma(shape=mu, scale=1.0 / mu, size=1_000_000)
            assert np.isclose(tau.mean(), 1.0, rtol=0.02)

    def test_awgn_zero_power_is_zero_vector(self, rng):
        spec = DisturbanceSpec(kind="AWGN", sigma_n2=0.0, m=8)
        assert np.array_equal(draw_disturbance(spec, rng), np.zeros(8))

    def test_mixture_requires_noise_power(self):
        with pytest.raises(InvalidArgumentError):
            DisturbanceSpec(kind="cGN+AWGN", sigma_n2=0.0)

    def test_conditional_gaussianity_given_texture(self, rng):
        # Holding tau fixed the compound draw is CN(0, tau * T(rho)).
        t = toeplitz(0.5, 8)
        for tau in (0.5, 2.0):
            Z = np.sqrt(tau) * draw_speckle(0.5, 8, rng, n=200_000)
            err = np.linalg.norm(scm_of(Z) - tau * t) / np.linalg.norm(tau * t)
            assert err < 0.03

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            DisturbanceSpec(kind="weibull")


class TestInjectTarget:
    def test_zero_snr_is_identity(self, rng):
        dist = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        out = inject_target(dist, TargetSpec(d=3, snr=0.0), rng)
        assert np.array_equal(out, dist)

    def test_energy_equals_snr_on_zero_background(self, rng):
        out = inject_target(np.zeros(16, complex), TargetSpec(d=5, snr=7.5), rng)
        assert np.isclose(np.linalg.norm(out) ** 2, 7.5)

    def test_dft_puts_all_energy_in_target_bin(self, rng):
        out = inject_target(np.zeros(16, complex),
                            TargetSpec(d=3, snr=10.0, phase=0.0), rng)
        prof = dft_unitary(out)
        assert np.isclose(abs(prof[3]), np.sqrt(10.0), atol=1e-12)
        others = np.delete(np.abs(prof), 3)
        assert others.max() < 1e-12

    def test_additive(self, rng):
        dist = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        t1 = TargetSpec(d=2, snr=4.0, phase=0.25)
        t2 = TargetSpec(d=9, snr=1.0, phase=0.5)
        a = inject_target(inject_target(dist, t1, rng), t2, rng)
        b = dist + (inject_target(np.zeros(16, complex), t1, rng)
                    + inject_target(np.zeros(16, complex), t2, rng))
        assert np.allclose(a, b, atol=1e-15)


class TestSimulateCube:
    def test_h0_cells_match_disturbance_law(self):
        spec = DisturbanceSpec(kind="cGN", rho=0.5, m=16)
        cube = simulate_cube(spec, n_ranges=256, n_pulses=1024, seed=5)
        snaps = cube.data.reshape(-1, 16)
        t = toeplitz(0.5, 16)
        err = np.linalg.norm(scm_of(snaps) - t) / np.linalg.norm(t)
        assert err < 0.05

    def test_strong_target_dominates_by_40db(self):
        spec = DisturbanceSpec(kind="cGN", rho=0.5, m=16)
        t = TargetSpec(d=5, snr=1e6, phase=0.0)
        cube = simulate_cube(spec, 8, 64, targets=[(3, 16, t)], seed=1)
        prof = np.abs(dft_unitary(cube.data[3, 16:32]))
        others = np.delete(prof, 5)
        assert 20 * np.log10(prof[5] / others.max()) >= 40

    def test_iid_case_unit_variance(self):
        spec = DisturbanceSpec(kind="cGN", rho=0.0, m=16)
        cube = simulate_cube(spec, 128, 512, seed=2)
        assert np.isclose(np.mean(np.abs(cube.data) ** 2), 1.0, rtol=0.02)

    def test_same_seed_bit_identical(self):
        spec = DisturbanceSpec(kind="cCGN+AWGN", rho=0.5, sigma_n2=1.0, m=16)
        a = simulate_cube(spec, 16, 64, seed=9)
        b = simulate_cube(spec, 16, 64, seed=9)
        assert np.array_equal(a.data, b.data)

    def test_overlapping_target_windows_rejected(self):
        spec = DisturbanceSpec(kind="cGN", rho=0.5, m=16)
        t = TargetSpec(d=0, snr=1.0)
        with pytest.raises(InvalidArgumentError):
            simulate_cube(spec, 8, 64, targets=[(2, 0, t), (2, 10, t)], seed=0)

    def test_target_window_must_fit(self):
        spec = DisturbanceSpec(kind="cGN", rho=0.5, m=16)
        with pytest.raises(InvalidArgumentError):
            simulate_cube(spec, 8, 64, targets=[(0, 60, TargetSpec(d=0, snr=1.0))],
                          seed=0)

    def test_cube_rejects_nonfinite(self):
        with pytest.raises(InvalidArgumentError):
            RangePulseCube(np.array([[np.inf + 0j, 0j]]))


class TestSubstreams:
    def test_distinct_keys_uncorrelated(self):
        n = 100_000
        a = substream(42, 4, 0).standard_normal(n)
        b = substream(42, 4, 1).standard_normal(n)
        assert abs(np.corrcoef(a, b)[0, 1]) < 3 / np.sqrt(n)

    def test_same_key_reproduces(self):
        a = substream(42, 1, 2, 3).standard_normal(10)
        b = substream(42, 1, 2, 3).standard_normal(10)
        assert np.array_equal(a, b)

    def test_negative_key_rejected(self):
        with pytest.raises(InvalidArgumentError):
            substream(1, -1)
