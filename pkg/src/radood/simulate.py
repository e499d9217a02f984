"""Seeded generation of disturbance environments and target injection.

Supported disturbance kinds:

* ``cGN``       correlated circular Gaussian speckle, covariance T(rho)
* ``cCGN``      compound Gaussian: sqrt(tau) * cGN with Gamma texture,
                tau ~ Gamma(mu, 1/mu) so E[tau] = 1
* ``AWGN``      white thermal noise, covariance sigma_n2 * I
* ``cGN+AWGN`` / ``cCGN+AWGN``   independent sums of the above

The texture is drawn once per m-pulse snapshot window (constant within a
coherent processing interval); per-pulse redrawing is deliberately not
implemented.

Reproducibility: all Monte Carlo code derives independent generators from a
64-bit master seed through :func:`substream`, keyed by integers such as
(purpose, trial).  Streams are order-independent, so parallel evaluation
reproduces the sequential results bit for bit.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError
from .linalg import toeplitz

DISTURBANCE_KINDS = ("cGN", "cCGN", "AWGN", "cGN+AWGN", "cCGN+AWGN")

# Namespace tags for substream keys inside simulate_cube.
_CELL_TAG = 0
_TARGET_TAG = 1


def substream(master_seed, *key):
    """Independent Generator for an integer key tuple under a master seed."""
    if any(k < 0 for k in key):
        raise InvalidArgumentError(f"substream key must be nonnegative, got {key}")
    return np.random.default_rng(np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class DisturbanceSpec:
    """Parameters of one disturbance environment."""

    kind: str
    rho: float = 0.5
    mu_texture: float = 1.0
    sigma_n2: float = 0.0
    m: int = 16

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise InvalidArgumentError(
                f"unknown disturbance kind {self.kind!r}, expected one of {DISTURBANCE_KINDS}")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidArgumentError(f"rho must lie in [0, 1), got {self.rho}")
        if self.mu_texture <= 0:
            raise InvalidArgumentError(f"mu_texture must be positive, got {self.mu_texture}")
        if self.sigma_n2 < 0:
            raise InvalidArgumentError(f"sigma_n2 must be nonnegative, got {self.sigma_n2}")
        # Pure AWGN tolerates sigma_n2 = 0 (degenerate zero draw); a mixture
        # with a zero noise term is almost surely a configuration mistake.
        if self.has_clutter and self.has_noise and self.sigma_n2 == 0:
            raise InvalidArgumentError(f"kind {self.kind} includes AWGN, needs sigma_n2 > 0")
        if self.m < 1:
            raise InvalidArgumentError(f"m must be positive, got {self.m}")

    @property
    def has_clutter(self):
        return "cGN" in self.kind or "cCGN" in self.kind

    @property
    def has_texture(self):
        return "cCGN" in self.kind

    @property
    def has_noise(self):
        return "AWGN" in self.kind

    def total_covariance(self):
        """E[z z^H]: clutter Toeplitz (unit texture mean) plus noise floor."""
        m = self.m
        sigma = np.zeros((m, m), dtype=np.complex128)
        if self.has_clutter:
            sigma += toeplitz(self.rho, m)
        if self.has_noise:
            sigma += self.sigma_n2 * np.eye(m)
        return sigma


@dataclass(frozen=True)
class TargetSpec:
    """Doppler bin, linear SNR and phase of an injected target."""

    d: int
    snr: float
    phase: object = "random"  # float in [0, 1) or the string "random"

    def __post_init__(self):
        if self.d < 0:
            raise InvalidArgumentError(f"Doppler bin must be nonnegative, got {self.d}")
        if self.snr < 0:
            raise InvalidArgumentError(f"snr must be nonnegative, got {self.snr}")
        if self.phase != "random" and not 0.0 <= float(self.phase) < 1.0:
            raise InvalidArgumentError(f"phase must be 'random' or in [0, 1), got {self.phase}")


@dataclass
class RangePulseCube:
    """Complex range-pulse matrix, the unit of ingestion."""

    data: np.ndarray  # (n_ranges, n_pulses) complex128

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise InvalidArgumentError(f"cube data must be 2-D, got shape {self.data.shape}")
        if not np.isfinite(self.data.view(np.float64)).all():
            raise InvalidArgumentError("cube data contains non-finite entries")

    @property
    def n_ranges(self):
        return self.data.shape[0]

    @property
    def n_pulses(self):
        return self.data.shape[1]


def steering(d, m):
    """Doppler steering vector p with entries exp(2j*pi*d*k/m), ||p||^2 = m."""
    if not 0 <= d < m:
        raise InvalidArgumentError(f"Doppler bin d={d} outside [0, {m})")
    k = np.arange(m)
    return np.exp(2j * np.pi * d * k / m)


@lru_cache(maxsize=64)
def _speckle_chol(rho, m):
    """Lower Cholesky factor of T(rho), cached per (rho, m)."""
    return np.linalg.cholesky(toeplitz(rho, m))


def _cn_standard(rng, shape):
    """i.i.d. circular CN(0, 1) samples."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z / np.sqrt(2.0)


def draw_speckle(rho, m, rng, n=None):
    """Correlated circular Gaussian speckle ~ CN(0, T(rho))."""
    shape = (m,) if n is None else (n, m)
    L = _speckle_chol(rho, m)
    return _cn_standard(rng, shape) @ L.T


def draw_disturbance(spec, rng, n=None):
    """Draw one disturbance snapshot (or a batch of n) under ``spec``.

    Call order on ``rng`` is fixed: texture, speckle, then thermal noise,
    so identical generator states reproduce identical draws.
    """
    shape = (spec.m,) if n is None else (n, spec.m)
    out = np.zeros(shape, dtype=np.complex128)
    if spec.has_clutter:
        if spec.has_texture:
            tau = rng.gamma(shape=spec.mu_texture, scale=1.0 / spec.mu_texture,
                            size=None if n is None else (n, 1))
            out += np.sqrt(tau) * draw_speckle(spec.rho, spec.m, rng, n)
        else:
            out += draw_speckle(spec.rho, spec.m, rng, n)
    if spec.has_noise:
        out += np.sqrt(spec.sigma_n2) * _cn_standard(rng, shape)
    return out


def inject_target(dist, target, rng):
    """Add alpha * p(d, m) to ``dist`` with alpha = sqrt(SNR/m) e^{2j pi phi}."""
    dist = np.asarray(dist, dtype=np.complex128)
    m = dist.shape[-1]
    phi = rng.uniform() if target.phase == "random" else float(target.phase)
    alpha = np.sqrt(target.snr / m) * np.exp(2j * np.pi * phi)
    return dist + alpha * steering(target.d, m)


def simulate_cube(spec, n_ranges, n_pulses, targets=(), seed=0):
    """Synthesize a range-pulse cube with optional injected targets.

    Parameters
    ----------
    spec : DisturbanceSpec
    n_ranges, n_pulses : int
    targets : sequence of (range_gate, pulse_offset, TargetSpec)
        Each target occupies the m-pulse slow-time window starting at
        ``pulse_offset`` on its range gate.  Windows at the same gate must
        not overlap.
    seed : int
        Master seed; cells are filled from per-(gate, window) substreams so
        the cube is bit-identical for identical seeds regardless of fill
        order.

    H0 cells follow ``spec``; the texture (when present) is drawn once per
    m-pulse window per gate.
    """
    if n_ranges < 1 or n_pulses < 1:
        raise InvalidArgumentError("cube dimensions must be positive")
    m = spec.m
    occupied = {}
    for gate, offset, t in targets:
        if not 0 <= gate < n_ranges:
            raise InvalidArgumentError(f"target gate {gate} outside cube")
        if offset < 0 or offset + m > n_pulses:
            raise InvalidArgumentError(
                f"target window [{offset}, {offset + m}) does not fit in {n_pulses} pulses")
        for prev_off in occupied.get(gate, []):
            if offset < prev_off + m and prev_off < offset + m:
                raise InvalidArgumentError(
                    f"overlapping target windows at gate {gate}: {prev_off} and {offset}")
        occupied.setdefault(gate, []).append(offset)

    data = np.empty((n_ranges, n_pulses), dtype=np.complex128)
    n_windows = (n_pulses + m - 1) // m
    for gate in range(n_ranges):
        for w in range(n_windows):
            lo, hi = w * m, min((w + 1) * m, n_pulses)
            rng = substream(seed, _CELL_TAG, gate, w)
            block_spec = spec if hi - lo == m else DisturbanceSpec(
                kind=spec.kind, rho=spec.rho, mu_texture=spec.mu_texture,
                sigma_n2=spec.sigma_n2, m=hi - lo)
            data[gate, lo:hi] = draw_disturbance(block_spec, rng)

    for ti, (gate, offset, t) in enumerate(targets):
        rng = substream(seed, _TARGET_TAG, ti)
        data[gate, offset:offset + m] = inject_target(data[gate, offset:offset + m], t, rng)

    return RangePulseCube(data)
