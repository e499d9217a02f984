"""Complex-valued VAE with a non-circular diagonal latent posterior.

Interpretation note on sigma: several published statements call sigma the
element-wise "standard deviation", but the reparameterization scales and the
closed-form KL used here are mutually consistent only when sigma is the
per-dimension latent *variance* E|x - mu|^2.  sigma is therefore treated as
the variance throughout this module:

    |k_r|^2 + k_i^2 = sigma        (second moment matches)
    k_r^2  - k_i^2  = delta        (pseudo-variance matches)
    sigma^2 - |delta|^2            (augmented-covariance determinant)

with validity |delta| < sigma guaranteed by the complex-softsign constraint.
k_r is complex in general (the formula demands it whenever delta is), while
k_i stays real nonnegative.

The KL term is the sum

    mu^H mu + sum_j (sigma_j - 0.5 * log(sigma_j^2 - |delta_j|^2))

which carries a constant +q offset against the exact divergence from the
circular unit prior (exact scalar KL: |mu|^2 + sigma - 1 - 0.5*log(...));
a constant changes neither gradients nor optima, so the printed form is kept
and the tests account for the offset explicitly.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, NumericError
from . import autodiff as ad

# Added to softplus(s_raw) so sigma stays bounded away from zero.
EPS_NUM = 1e-6
# Pure zero-division guards inside the reparameterization roots/denominators;
# small enough never to disturb the 1e-10 moment identities.
_REPARAM_GUARD = 1e-30


@dataclass(frozen=True)
class ConvBlockSpec:
    channels: int
    kernel: int
    pool: int


@dataclass(frozen=True)
class CvaeArchitecture:
    """Encoder layout; the decoder mirrors it."""

    input_len: int = 16
    blocks: tuple = (ConvBlockSpec(8, 5, 2), ConvBlockSpec(16, 5, 2))
    activation: str = "modrelu"  # modrelu | crelu
    latent_dim: int = 8
    norm: bool = True

    def __post_init__(self):
        if self.latent_dim < 1:
            raise InvalidArgumentError("latent_dim must be at least 1")
        if self.activation not in ("modrelu", "crelu"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        L = self.input_len
        for b in self.blocks:
            if b.kernel % 2 == 0:
                raise InvalidArgumentError("conv kernels must be odd (same padding)")
            if L % b.pool:
                raise InvalidArgumentError(
                    f"pool factor {b.pool} does not divide intermediate length {L}")
            L //= b.pool

    @property
    def feature_len(self):
        L = self.input_len
        for b in self.blocks:
            L //= b.pool
        return L

    @property
    def feature_dim(self):
        return self.blocks[-1].channels * self.feature_len if self.blocks else self.input_len


@dataclass
class PosteriorParams:
    """Per-sample latent posterior: mean, variance and pseudo-variance.

    sigma is E|x - mu|^2 (real positive), delta is E[(x - mu)^2] (complex)
    with |delta| < sigma strictly, guaranteed by construction.
    """

    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray

    def validate(self):
        if np.any(self.sigma <= 0):
            raise InvalidArgumentError("posterior sigma must be strictly positive")
        if np.any(np.abs(self.delta) >= self.sigma):
            raise InvalidArgumentError("posterior violates |delta| < sigma")


@dataclass
class ReparamScales:
    k_r: np.ndarray  # complex
    k_i: np.ndarray  # real nonnegative


def constrain_sigma_delta(s_raw, delta_raw, eps_num=EPS_NUM):
    """Map unconstrained head outputs to a valid (sigma, delta) pair.

    sigma = softplus(s_raw) + eps_num; delta = sigma * d/(1+|d|), which keeps
    |delta| < sigma strictly while preserving the phase of delta_raw.
    """
    s_raw = np.asarray(s_raw, dtype=np.float64)
    delta_raw = np.asarray(delta_raw, dtype=np.complex128)
    sigma = np.logaddexp(0.0, s_raw) + eps_num
    eta = delta_raw / (1.0 + np.abs(delta_raw))
    return sigma, sigma * eta


def reparam_scales(sigma, delta):
    """Element-wise scales matching the posterior's second-order moments."""
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.complex128)
    if np.any(np.abs(delta) >= sigma):
        raise InvalidArgumentError("reparam_scales requires |delta| < sigma")
    denom = np.sqrt(sigma + delta.real + _REPARAM_GUARD)
    k_r = (sigma + delta) / (np.sqrt(2.0) * denom)
    k_i = np.sqrt(np.maximum(sigma ** 2 - np.abs(delta) ** 2, _REPARAM_GUARD))
    k_i = k_i / (np.sqrt(2.0) * denom)
    return ReparamScales(k_r=k_r, k_i=k_i)


def sample_latent(post, rng, n=None):
    """x = mu + k_r * eps_r + i k_i * eps_i with real standard normal eps."""
    scales = reparam_scales(post.sigma, post.delta)
    shape = post.mu.shape if n is None else (n,) + post.mu.shape
    eps_r = rng.standard_normal(shape)
    eps_i = rng.standard_normal(shape)
    return post.mu + scales.k_r * eps_r + 1j * scales.k_i * eps_i


def kl_closed_form(post):
    """KL to the circular unit prior, exactly as printed (carries +q offset)."""
    sigma = np.asarray(post.sigma, dtype=np.float64)
    delta = np.asarray(post.delta, dtype=np.complex128)
    det = sigma ** 2 - np.abs(delta) ** 2
    if np.any(det <= 0):
        raise InvalidArgumentError("sigma^2 - |delta|^2 must be positive")
    mu = np.asarray(post.mu, dtype=np.complex128)
    return float(np.sum(np.abs(mu) ** 2) + np.sum(sigma - 0.5 * np.log(det)))


class CvaeModel:
    """Parameter container plus graph builders for training and scoring."""

    def __init__(self, arch, params):
        self.arch = arch
        self.params = params

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, arch, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
        params = {}

        def cdense(name, out_dim, in_dim):
            std = np.sqrt(1.0 / (in_dim + out_dim))
            w = (rng.standard_normal((out_dim, in_dim))
                 + 1j * rng.standard_normal((out_dim, in_dim))) * (std / np.sqrt(2))
            params[name + "_w"] = ad.Var(w, requires_grad=True)
            params[name + "_b"] = ad.Var(np.zeros(out_dim, np.complex128), requires_grad=True)

        def cconv(name, c_out, c_in, k):
            std = np.sqrt(1.0 / ((c_in + c_out) * k))
            w = (rng.standard_normal((c_out, c_in, k))
                 + 1j * rng.standard_normal((c_out, c_in, k))) * (std / np.sqrt(2))
            params[name + "_w"] = ad.Var(w, requires_grad=True)
            params[name + "_b"] = ad.Var(np.zeros(c_out, np.complex128), requires_grad=True)

        def block_extras(name, channels):
            params[name + "_act"] = ad.Var(np.zeros(channels), requires_grad=True)
            if arch.norm:
                params[name + "_gain"] = ad.Var(np.ones(channels, np.complex128),
                                                requires_grad=True)

        c_prev = 1
        for i, b in enumerate(arch.blocks):
            cconv(f"enc{i}", b.channels, c_prev, b.kernel)
            block_extras(f"enc{i}", b.channels)
            c_prev = b.channels

        F, q = arch.feature_dim, arch.latent_dim
        cdense("head_mu", q, F)
        cdense("head_s", q, F)
        cdense("head_d", q, F)
        cdense("dec_fc", F, q)

        rev = list(enumerate(arch.blocks))[::-1]
        for j, (i, b) in enumerate(rev):
            c_out = 1 if i == 0 else arch.blocks[i - 1].channels
            cconv(f"dec{j}", c_out, b.channels, b.kernel)
            if i != 0:
                block_extras(f"dec{j}", c_out)
        return cls(arch, params)

    def _act(self, x, bias):
        if self.arch.activation == "modrelu":
            return ad.modrelu(x, bias)
        return ad.crelu(x)

    def _check_finite(self, var, layer):
        v = var.value
        if not np.isfinite(v.view(np.float64) if np.iscomplexobj(v) else v).all():
            raise NumericError(f"non-finite activations after layer {layer!r}")

    # -- graphs ---------------------------------------------------------------

    def _encode_graph(self, z):
        """z (B, m) -> (mu, s_raw, d_raw) head Vars."""
        p = self.params
        h = ad.reshape(ad.lift(np.asarray(z, np.complex128)), (-1, 1, self.arch.input_len))
        for i, b in enumerate(self.arch.blocks):
            h = ad.conv1d(h, p[f"enc{i}_w"], p[f"enc{i}_b"])
            h = self._act(h, p[f"enc{i}_act"])
            if b.pool > 1:
                h = ad.maxpool_mod(h, b.pool)
            if self.arch.norm:
                h = ad.channel_norm(h, p[f"enc{i}_gain"])
            self._check_finite(h, f"enc{i}")
        flat = ad.reshape(h, (-1, self.arch.feature_dim))
        mu = ad.dense(flat, p["head_mu_w"], p["head_mu_b"])
        s_raw = ad.real_part(ad.dense(flat, p["head_s_w"], p["head_s_b"]))
        d_raw = ad.dense(flat, p["head_d_w"], p["head_d_b"])
        self._check_finite(mu, "heads")
        return mu, s_raw, d_raw

    def _constrain_graph(self, s_raw, d_raw):
        sigma = ad.add(ad.softplus(s_raw), ad.Var(np.asarray(EPS_NUM)))
        eta = ad.div(d_raw, ad.add(ad.cabs(d_raw), ad.Var(np.asarray(1.0))))
        delta = ad.mul(sigma, eta)
        return sigma, delta

    def _reparam_graph(self, mu, sigma, delta, eps_r, eps_i):
        denom = ad.sqrt(ad.add(ad.add(sigma, ad.real_part(delta)),
                               ad.Var(np.asarray(_REPARAM_GUARD))))
        k_r = ad.scale(ad.div(ad.add(sigma, delta), denom), 1.0 / np.sqrt(2.0))
        det = ad.add(ad.sub(ad.mul(sigma, sigma), ad.abs2(delta)),
                     ad.Var(np.asarray(_REPARAM_GUARD)))
        k_i = ad.scale(ad.div(ad.sqrt(det), denom), 1.0 / np.sqrt(2.0))
        x = ad.add(mu, ad.add(ad.mul(k_r, ad.lift(eps_r)),
                              ad.scale(ad.mul(k_i, ad.lift(eps_i)), 1j)))
        return x

    def _kl_graph(self, mu, sigma, delta):
        """Per-sample KL (B,), printed form."""
        det = ad.sub(ad.mul(sigma, sigma), ad.abs2(delta))
        terms = ad.sub(sigma, ad.scale(ad.log(det), 0.5))
        return ad.add(ad.sum_(ad.abs2(mu), axis=1), ad.sum_(terms, axis=1))

    def _decode_graph(self, x):
        p = self.params
        h = ad.dense(x, p["dec_fc_w"], p["dec_fc_b"])
        h = ad.reshape(h, (-1, self.arch.blocks[-1].channels if self.arch.blocks else 1,
                           self.arch.feature_len))
        rev = list(enumerate(self.arch.blocks))[::-1]
        for j, (i, b) in enumerate(rev):
            if b.pool > 1:
                h = ad.upsample_repeat(h, b.pool)
            h = ad.conv1d(h, p[f"dec{j}_w"], p[f"dec{j}_b"])
            if i != 0:
                h = self._act(h, p[f"dec{j}_act"])
                if self.arch.norm:
                    h = ad.channel_norm(h, p[f"dec{j}_gain"])
            self._check_finite(h, f"dec{j}")
        return ad.reshape(h, (-1, self.arch.input_len))

    def elbo_graph(self, z, beta, eps_r, eps_i):
        """Batch mean graph of ||z - zhat||^2 + beta * KL; returns Vars."""
        z = np.atleast_2d(np.asarray(z, np.complex128))
        mu, s_raw, d_raw = self._encode_graph(z)
        sigma, delta = self._constrain_graph(s_raw, d_raw)
        x = self._reparam_graph(mu, sigma, delta, eps_r, eps_i)
        zhat = self._decode_graph(x)
        recon = ad.sum_(ad.abs2(ad.sub(zhat, ad.lift(z))), axis=1)
        kl = self._kl_graph(mu, sigma, delta)
        total = ad.mean(ad.add(recon, ad.scale(kl, beta)))
        return total, float(recon.value.mean()), float(kl.value.mean())

    # -- public operations ----------------------------------------------------

    def encode(self, z):
        """Posterior parameters for one profile (m,) or a batch (B, m)."""
        z = np.asarray(z, np.complex128)
        single = z.ndim == 1
        with ad.no_grad():
            mu, s_raw, d_raw = self._encode_graph(np.atleast_2d(z))
        sigma, delta = constrain_sigma_delta(s_raw.value, d_raw.value)
        muv = mu.value
        if single:
            muv, sigma, delta = muv[0], sigma[0], delta[0]
        return PosteriorParams(mu=muv, sigma=sigma, delta=delta)

    def decode(self, x):
        x = np.asarray(x, np.complex128)
        single = x.ndim == 1
        with ad.no_grad():
            zhat = self._decode_graph(np.atleast_2d(x)).value
        return zhat[0] if single else zhat

    def elbo_loss(self, z, beta, rng):
        """Single-sample reparameterized ELBO estimate (reported as a float)."""
        if beta < 0:
            raise InvalidArgumentError("beta must be nonnegative")
        z2 = np.atleast_2d(np.asarray(z, np.complex128))
        q = self.arch.latent_dim
        eps_r = rng.standard_normal((z2.shape[0], q))
        eps_i = rng.standard_normal((z2.shape[0], q))
        with ad.no_grad():
            total, _, _ = self.elbo_graph(z2, beta, eps_r, eps_i)
        return float(total.value)

    def recon_score(self, z, sample=False, rng=None):
        """Reconstruction error sum |z_n - zhat_n|^2, decoding from mu.

        The deterministic mu decoding keeps thresholds reproducible; pass
        ``sample=True`` (with an rng) to decode from a posterior draw.
        """
        scores = self.score_batch(np.atleast_2d(np.asarray(z, np.complex128)),
                                  sample=sample, rng=rng)
        return float(scores[0]) if np.asarray(z).ndim == 1 else scores

    def score_batch(self, Z, chunk=4096, sample=False, rng=None):
        """Reconstruction scores for (N, m) profiles, evaluated in chunks."""
        Z = np.asarray(Z, np.complex128)
        out = np.empty(Z.shape[0])
        if sample and rng is None:
            raise InvalidArgumentError("sampled scoring requires an rng")
        for lo in range(0, Z.shape[0], chunk):
            zc = Z[lo:lo + chunk]
            with ad.no_grad():
                mu, s_raw, d_raw = self._encode_graph(zc)
                if sample:
                    sigma, delta = constrain_sigma_delta(s_raw.value, d_raw.value)
                    post = PosteriorParams(mu.value, sigma, delta)
                    x = sample_latent(post, rng)
                    zhat = self._decode_graph(x).value
                else:
                    zhat = self._decode_graph(mu.value).value
            out[lo:lo + chunk] = (np.abs(zc - zhat) ** 2).sum(axis=1)
        return out
