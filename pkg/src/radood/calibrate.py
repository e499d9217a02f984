"""Per-Doppler-bin null calibration, p-value fusion and CFAR thresholds.

PIT convention: p = (1 + #{null >= s}) / (N_b + 1).  The raw 1 - F(s) form
hits p = 0 for scores above every calibration point, which would make log p
infinite; the add-one form is the standard conservative fix, never returns 0,
and preserves the CFAR direction.

Decisions for every empirically calibrated detector use the p-value rule

    declare H1  <=>  p <= pvalue_threshold(N_b, pfa)

with pvalue_threshold(n, pfa) = floor(pfa*(n+1))/(n+1), the largest
achievable level not exceeding pfa.  Because the PIT depends only on ranks,
any strictly increasing re-scoring of a detector leaves decisions
bit-identical, and a fused statistic with weight 1 on one branch reproduces
that branch's decisions exactly.
"""

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientDataError, InvalidArgumentError

_SIDECAR_MAGIC = b"CALB"
_SIDECAR_VERSION = 1


@dataclass
class EcdfBank:
    """Sorted per-bin null score arrays for one detector."""

    sorted_scores: list  # one ascending float64 array per Doppler bin
    kind: str = ""

    @property
    def n_bins(self):
        return len(self.sorted_scores)

    def counts(self):
        return np.array([a.size for a in self.sorted_scores])

    def cdf(self, b, s):
        """F_hat(s) = #{null <= s} / N_b (ties all counted)."""
        a = self.sorted_scores[b]
        return np.searchsorted(a, s, side="right") / a.size

    def pvalues(self, b, scores):
        """Add-one PIT p-values of ``scores`` against bin b's null."""
        a = self.sorted_scores[b]
        n_ge = a.size - np.searchsorted(a, scores, side="left")
        return (1.0 + n_ge) / (a.size + 1.0)


def fit_ecdf(null_scores_per_bin, kind=""):
    """Build an EcdfBank from per-bin arrays of H0 scores."""
    arrays = []
    for b, scores in enumerate(null_scores_per_bin):
        a = np.asarray(scores, dtype=np.float64)
        if a.size == 0:
            raise InsufficientDataError(f"no null scores for Doppler bin {b}")
        arrays.append(np.sort(a))
    return EcdfBank(sorted_scores=arrays, kind=kind)


def pit_pvalue(bank, b, s):
    """Scalar add-one PIT p-value, in (0, 1]."""
    return float(bank.pvalues(b, np.asarray([s]))[0])


def pvalue_threshold(n, pfa):
    """Largest achievable PIT level <= pfa given n calibration scores."""
    if not 0.0 < pfa < 1.0:
        raise InvalidArgumentError(f"pfa must lie in (0, 1), got {pfa}")
    j = int(np.floor(pfa * (n + 1)))
    if j < 1:
        warnings.warn(
            f"n={n} calibration scores cannot achieve pfa={pfa}; "
            "falling back to the most conservative level 1/(n+1)")
        j = 1
    return j / (n + 1)


@dataclass
class WeightSchedule:
    w: np.ndarray  # per-bin weights in [0, 1]
    kind: str

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.any((self.w < 0) | (self.w > 1)):
            raise InvalidArgumentError("weights must lie in [0, 1]")


def weights_sigmoid(null_pvalues_per_bin, use_std=True):
    """Data-driven logistic schedule from per-bin mean null p-values.

    w_b = sigmoid((pbar_b - mu_p) / s_p) where pbar_b is the mean null
    p-value of bin b, mu_p the across-bin mean of the pbar_b and s_p their
    across-bin standard deviation (``use_std=False`` selects the raw
    variance instead, the alternative reading of the printed formula).
    Degenerate spread (s_p = 0) yields the uniform schedule w = 0.5.
    """
    pbar = []
    for b, pv in enumerate(null_pvalues_per_bin):
        pv = np.asarray(pv, dtype=np.float64)
        if pv.size < 2:
            raise InsufficientDataError(f"bin {b} needs at least 2 null p-values")
        pbar.append(pv.mean())
    pbar = np.asarray(pbar)
    mu_p = pbar.mean()
    spread = pbar.std() if use_std else pbar.var()
    if spread == 0.0:
        return WeightSchedule(w=np.full(pbar.size, 0.5), kind="sigmoid")
    return WeightSchedule(w=1.0 / (1.0 + np.exp(-(pbar - mu_p) / spread)), kind="sigmoid")


def circular_bin_distance(b, b0, m):
    d = abs(b - b0) % m
    return min(d, m - d)


def weights_gaussian_prior(b0, sigma0, m):
    """Gaussian bump centered on bin b0 with circular Doppler distance."""
    if sigma0 <= 0:
        raise InvalidArgumentError(f"sigma0 must be positive, got {sigma0}")
    d = np.array([circular_bin_distance(b, b0, m) for b in range(m)], dtype=np.float64)
    return WeightSchedule(w=np.exp(-0.5 * (d / sigma0) ** 2), kind="gaussian-prior")


def fuse_logp(p_anmf, p_cvae, w):
    """Directed weighted log-p combination: -(w ln p_a + (1-w) ln p_c).

    Strictly decreasing in each p-value for w in (0, 1); at the endpoints it
    reduces to the single-branch ranking exactly.
    """
    p_anmf = np.asarray(p_anmf, dtype=np.float64)
    p_cvae = np.asarray(p_cvae, dtype=np.float64)
    if np.any(p_anmf <= 0) or np.any(p_cvae <= 0) or np.any(p_anmf > 1) or np.any(p_cvae > 1):
        raise InvalidArgumentError("p-values must lie in (0, 1]")
    if not 0.0 <= w <= 1.0:
        raise InvalidArgumentError(f"fusion weight must lie in [0, 1], got {w}")
    out = -(w * np.log(p_anmf) + (1.0 - w) * np.log(p_cvae))
    return float(out) if out.ndim == 0 else out


@dataclass
class ThresholdTable:
    """Per-bin raw-score thresholds at a target false-alarm rate."""

    lambdas: np.ndarray
    pfa: float
    n_calibration: np.ndarray

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        self.n_calibration = np.asarray(self.n_calibration, dtype=np.int64)
        if not 0.0 < self.pfa < 1.0:
            raise InvalidArgumentError(f"pfa must lie in (0, 1), got {self.pfa}")


def _upper_quantile(a, pfa):
    """Smallest value whose >=-exceedance on ``a`` is at most pfa."""
    n = a.size
    k = int(np.floor(pfa * n))
    for i in range(n - k, n):
        if n - np.searchsorted(a, a[i], side="left") <= k:
            return float(a[i])
    return np.inf


def cfar_threshold(null_fused_per_bin, pfa):
    """Finite-sample per-bin thresholds: the declare rule is score >= lambda(b).

    lambda(b) is the smallest calibration score whose own-set exceedance
    #{null >= lambda}/N_b does not exceed pfa, so the empirical false-alarm
    rate on the calibration set is <= pfa by construction.
    """
    if not 0.0 < pfa < 1.0:
        raise InvalidArgumentError(f"pfa must lie in (0, 1), got {pfa}")
    lambdas, counts = [], []
    for b, scores in enumerate(null_fused_per_bin):
        a = np.sort(np.asarray(scores, dtype=np.float64))
        if a.size < 10:
            raise InsufficientDataError(
                f"bin {b} has {a.size} null scores, need at least 10")
        if a.size < 1.0 / pfa:
            warnings.warn(f"bin {b}: {a.size} null scores is thin for pfa={pfa}")
        lambdas.append(_upper_quantile(a, pfa))
        counts.append(a.size)
    return ThresholdTable(lambdas=np.asarray(lambdas), pfa=pfa,
                          n_calibration=np.asarray(counts))


def dkw_bound(n, alpha):
    """Dvoretzky-Kiefer-Wolfowitz sup-norm bound sqrt(ln(2/alpha)/(2n))."""
    if n < 1:
        raise InvalidArgumentError(f"n must be at least 1, got {n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * n)))


# ---------------------------------------------------------------------------
# Serialization: versioned binary sidecar plus human-readable CSV summary.
# ---------------------------------------------------------------------------

def save_calibration(path, banks, weights, thresholds, pfa, meta=None):
    """Write banks/weights/thresholds to a binary sidecar.

    banks : dict detector kind -> EcdfBank
    weights : WeightSchedule
    thresholds : dict detector kind -> ThresholdTable
    """
    arrays = []
    manifest = {"pfa": pfa, "meta": meta or {}, "weights_kind": weights.kind,
                "banks": {}, "thresholds": {}}
    arrays.append(np.asarray(weights.w, dtype="<f8"))
    manifest["weights_len"] = int(weights.w.size)
    for kind in sorted(banks):
        bank = banks[kind]
        manifest["banks"][kind] = [int(a.size) for a in bank.sorted_scores]
        arrays.extend(np.asarray(a, dtype="<f8") for a in bank.sorted_scores)
    for kind in sorted(thresholds):
        t = thresholds[kind]
        manifest["thresholds"][kind] = {
            "n_calibration": [int(x) for x in t.n_calibration]}
        arrays.append(np.asarray(t.lambdas, dtype="<f8"))
    hdr = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_SIDECAR_MAGIC)
        f.write(struct.pack("<II", _SIDECAR_VERSION, len(hdr)))
        f.write(hdr)
        for a in arrays:
            f.write(a.tobytes())


def load_calibration(path):
    """Inverse of save_calibration; returns (banks, weights, thresholds, pfa, meta)."""
    with open(path, "rb") as f:
        if f.read(4) != _SIDECAR_MAGIC:
            raise FormatError("bad calibration sidecar magic", offset=0)
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _SIDECAR_VERSION:
            raise FormatError(f"unsupported sidecar version {version}", offset=4)
        manifest = json.loads(f.read(hlen).decode())

        def read_array(n):
            raw = f.read(8 * n)
            if len(raw) != 8 * n:
                raise FormatError("truncated sidecar payload")
            return np.frombuffer(raw, dtype="<f8").copy()

        weights = WeightSchedule(w=read_array(manifest["weights_len"]),
                                 kind=manifest["weights_kind"])
        banks = {}
        for kind in sorted(manifest["banks"]):
            sizes = manifest["banks"][kind]
            banks[kind] = EcdfBank(sorted_scores=[read_array(n) for n in sizes],
                                   kind=kind)
        thresholds = {}
        for kind in sorted(manifest["thresholds"]):
            info = manifest["thresholds"][kind]
            n_cal = np.asarray(info["n_calibration"], dtype=np.int64)
            thresholds[kind] = ThresholdTable(lambdas=read_array(n_cal.size),
                                              pfa=manifest["pfa"],
                                              n_calibration=n_cal)
    return banks, weights, thresholds, manifest["pfa"], manifest["meta"]


def write_calibration_summary(path, banks, weights, thresholds):
    """Per-bin CSV: detector, bin, N_b, lambda, w_b."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["detector", "doppler_bin", "n_b", "lambda", "w_b"])
        for kind in sorted(thresholds):
            t = thresholds[kind]
            counts = banks[kind].counts() if kind in banks else t.n_calibration
            for b in range(t.lambdas.size):
                w.writerow([kind, b, int(counts[b]), repr(float(t.lambdas[b])),
                            repr(float(weights.w[b % weights.w.size]))])
