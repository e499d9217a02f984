import numpy as np
import pytest
import scipy.stats

from radood.covariance import CovarianceEstimate, scm, tyler_fp
from radood.detectors import (ANMF_TYLER, MF, NMF, adaptive_stat, mf_nmf_from_inv,
                              mf_nmf_known_cov, mf_nmf_per_cov, mf_stat, nmf_stat)
from radood.errors import InvalidArgumentError
from radood.linalg import toeplitz
from radood.simulate import draw_speckle, steering


def cn_samples(rng, n, m):
    return (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)


class TestMfStat:
    def test_matched_signal_identity_cov(self):
        p = steering(0, 16)
        assert np.isclose(mf_stat(p, p, np.eye(16)), 16.0)

    def test_orthogonal_signal(self):
        assert mf_stat(steering(4, 8), steering(0, 8), np.eye(8)) < 1e-20

    def test_analytic_false_alarm_rate(self, rng):
        # White Gaussian null at threshold ln(100): expect P_fa = 1e-2.
        n = 100_000
        Z = cn_samples(rng, n, 16)
        p = steering(0, 16)
        lam, _ = mf_nmf_known_cov(Z, p[None, :], np.eye(16))
        pfa_hat = (lam[:, 0] >= np.log(100.0)).mean()
        sigma3 = 3 * np.sqrt(0.01 * 0.99 / n)
        assert abs(pfa_hat - 0.01) < sigma3

    def test_null_is_unit_exponential(self, rng):
        Z = cn_samples(rng, 100_000, 16)
        p = steering(2, 16)
        lam, _ = mf_nmf_known_cov(Z, p[None, :], np.eye(16))
        ks = scipy.stats.kstest(lam[:, 0], "expon").statistic
        assert ks < 0.01

    def test_nonconformable(self):
        with pytest.raises(InvalidArgumentError):
            mf_stat(np.ones(4, complex), np.ones(3, complex), np.eye(4))


class TestNmfStat:
    def test_aligned_signal_reaches_one(self, rng):
        p = steering(3, 16)
        c = 0.7 - 2.1j
        assert np.isclose(nmf_stat(c * p, p, np.eye(16)), 1.0)

    def test_orthogonal_signal_is_zero(self):
        assert nmf_stat(steering(4, 8), steering(0, 8), np.eye(8)) < 1e-20

    def test_scale_invariance(self, rng):
        sigma_inv = np.linalg.inv(toeplitz(0.5, 16))
        z = cn_samples(rng, 1, 16)[0]
        p = steering(1, 16)
        base = nmf_stat(z, p, sigma_inv)
        assert nmf_stat(4.0 * z, p, sigma_inv) == nmf_stat(z, p, sigma_inv)
        for c in (0.3, 2.7, 1j, 0.5 - 0.2j):
            assert np.isclose(nmf_stat(c * z, p, sigma_inv), base, rtol=1e-12)

    def test_bounded_unit_interval(self, rng):
        sigma_inv = np.linalg.inv(toeplitz(0.9, 8))
        p = steering(2, 8)
        for z in cn_samples(rng, 200, 8):
            assert 0.0 <= nmf_stat(z, p, sigma_inv) <= 1.0

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidArgumentError):
            nmf_stat(np.zeros(8, complex), steering(0, 8), np.eye(8))


class TestAdaptiveStat:
    def test_oracle_covariance_reduces_to_classical(self, rng):
        t = toeplitz(0.5, 16)
        est = CovarianceEstimate(matrix=t, kind="Oracle")
        z = cn_samples(rng, 1, 16)[0]
        p = steering(5, 16)
        inv = np.linalg.inv(t)
        assert np.isclose(adaptive_stat("AMF-SCM", z, p, est).value,
                          mf_stat(z, p, inv))
        assert np.isclose(adaptive_stat("ANMF-SCM", z, p, est).value,
                          nmf_stat(z, p, inv))

    def test_anmf_tyler_secondary_scale_invariance(self, rng):
        Z = draw_speckle(0.5, 16, rng, n=32)
        scales = 2.0 ** rng.integers(-4, 4, size=32)
        z = cn_samples(rng, 1, 16)[0]
        p = steering(3, 16)
        a = adaptive_stat(ANMF_TYLER, z, p, tyler_fp(Z)).value
        b = adaptive_stat(ANMF_TYLER, z, p, tyler_fp(Z * scales[:, None])).value
        assert a == b

    def test_amf_scm_inflates_false_alarms(self, rng):
        # Estimation loss: empirical P_fa at the analytic MF threshold must
        # exceed the nominal value when the covariance is estimated.
        n, K, m = 100_000, 32, 16
        L = np.linalg.cholesky(toeplitz(0.5, m))
        cuts = cn_samples(rng, n, m) @ L.T
        secs = (cn_samples(rng, n * K, m) @ L.T).reshape(n, K, m)
        S = np.einsum("tki,tkj->tij", secs, secs.conj()) / K
        p = steering(0, m)
        lam, _ = mf_nmf_per_cov(cuts, p[None, :], S)
        pfa_hat = (lam[:, 0] >= np.log(100.0)).mean()
        assert pfa_hat > 0.01 + 5 * np.sqrt(0.01 * 0.99 / n)

    def test_unknown_kind(self, rng):
        with pytest.raises(InvalidArgumentError):
            adaptive_stat("GLRT", np.ones(4, complex), np.ones(4, complex),
                          CovarianceEstimate(np.eye(4), "Oracle"))


class TestInvariances:
    def test_unitary_change_of_basis(self, rng):
        m = 8
        t = toeplitz(0.5, m)
        q, _ = np.linalg.qr(rng.standard_normal((m, m))
                            + 1j * rng.standard_normal((m, m)))
        z = cn_samples(rng, 1, m)[0]
        p = steering(1, m)
        inv = np.linalg.inv(t)
        inv_rot = np.linalg.inv(q @ t @ q.conj().T)
        assert np.isclose(mf_stat(q @ z, q @ p, inv_rot), mf_stat(z, p, inv),
                          rtol=1e-10)
        assert np.isclose(nmf_stat(q @ z, q @ p, inv_rot), nmf_stat(z, p, inv),
                          rtol=1e-10)

    def test_mf_monotone_in_snr_phase_averaged(self, rng):
        # With the target phase marginalized the statistic's expectation is
        # a^2 (p^H S^-1 p)^2 + const, strictly increasing in injected SNR.
        m = 16
        inv = np.linalg.inv(toeplitz(0.5, m))
        p = steering(0, m)
        d = draw_speckle(0.5, m, rng)
        snrs = 10.0 ** (np.arange(-5.0, 31.0, 1.0) / 10.0)
        phases = np.exp(2j * np.pi * np.arange(64) / 64)
        means = []
        for s in snrs:
            vals = [mf_stat(np.sqrt(s / m) * ph * p + d, p, inv) for ph in phases]
            means.append(np.mean(vals))
        assert np.all(np.diff(means) > 0)

    def test_mf_quadratic_in_amplitude_at_fixed_phase(self, rng):
        # At phi = 0 the statistic is an upward parabola in sqrt(SNR): it is
        # nondecreasing past its vertex, and nondecreasing everywhere when
        # Re(p^H S^-1 d) >= 0.
        m = 16
        inv = np.linalg.inv(toeplitz(0.5, m))
        p = steering(0, m)
        for trial in range(20):
            d = draw_speckle(0.5, m, np.random.default_rng(trial))
            amps = np.linspace(0.0, 3.0, 40)
            vals = np.array([mf_stat(a * p + d, p, inv) for a in amps])
            k = int(vals.argmin())
            assert np.all(np.diff(vals[k:]) >= -1e-12)
            if (p.conj() @ inv @ d).real >= 0:
                assert np.all(np.diff(vals) >= -1e-12)


class TestBatchedHelpers:
    def test_batched_matches_scalar(self, rng):
        m = 8
        t = toeplitz(0.5, m)
        inv = np.linalg.inv(t)
        Z = cn_samples(rng, 10, m)
        P = np.stack([steering(d, m) for d in range(m)])
        mf, nmf, _ = mf_nmf_from_inv(Z, P, inv)
        for i in range(10):
            for b in range(m):
                assert np.isclose(mf[i, b], mf_stat(Z[i], P[b], inv), rtol=1e-10)
                assert np.isclose(nmf[i, b], nmf_stat(Z[i], P[b], inv), rtol=1e-10)

    def test_per_trial_covariances(self, rng):
        m = 8
        Z = cn_samples(rng, 6, m)
        secs = np.stack([draw_speckle(0.5, m, rng, n=24) for _ in range(6)])
        sigmas = np.stack([scm(s).matrix for s in secs])
        P = np.stack([steering(d, m) for d in (0, 3)])
        mf, nmf = mf_nmf_per_cov(Z, P, sigmas)
        for i in range(6):
            inv = np.linalg.inv(sigmas[i])
            for j, b in enumerate((0, 3)):
                assert np.isclose(mf[i, j], mf_stat(Z[i], P[j], inv), rtol=1e-9)
                assert np.isclose(nmf[i, j], nmf_stat(Z[i], P[j], inv), rtol=1e-9)
