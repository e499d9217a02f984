"""Trial-based Monte Carlo engine: score generation, calibration, decisions.

Trials are drawn in fixed-size chunks, each seeded from
(master, purpose, ..., chunk_index), and chunk results are reduced in chunk
order.  Worker count therefore never changes any output bit.  The H0 stages
(train / calibration / held-out false-alarm / H1 evaluation) use distinct
purpose codes, which is what makes the data splits disjoint by construction.

For the probability-of-detection sweep, each trial's disturbance,
secondaries and target phase are shared across the whole SNR grid (common
random numbers): the per-point estimates stay unbiased and the Pd-vs-SNR
curves become monotone up to threshold granularity.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import calibrate as cal
from ..covariance import tyler_fp_batch
from ..detectors import (AMF_SCM, ANMF_SCM, ANMF_TYLER, MF, NMF,
                         mf_nmf_from_inv, steering_norms)
from ..errors import DependencyError, InvalidArgumentError
from ..linalg import dft_unitary, herm_inv_sqrt
from ..simulate import draw_disturbance, steering, substream

FUSED = "FUSED"
CVAE = "CVAE"

PURPOSE_TRAIN = 1
PURPOSE_CAL = 2
PURPOSE_TEST_H0 = 3
PURPOSE_TEST_H1 = 4
_PURPOSES = (PURPOSE_TRAIN, PURPOSE_CAL, PURPOSE_TEST_H0, PURPOSE_TEST_H1)
# The seed-partitioned splits are disjoint exactly because purpose codes are.
assert len(set(_PURPOSES)) == len(_PURPOSES)

CHUNK = 4096


def steering_matrix(bins, m):
    return np.stack([steering(d, m) for d in bins])


def chunk_bounds(n):
    return [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]


def draw_trial_chunk(spec, k_secondary, master, key, lo, hi, with_phase=False):
    """Draw [lo, hi) trials of one purpose: CUTs, optional secondaries, phases.

    ``key`` is (purpose, ...) and the chunk index is lo // CHUNK; draws
    inside a chunk happen in a fixed order (CUTs, secondaries, phases).
    """
    if lo % CHUNK:
        raise InvalidArgumentError("chunk must start on a CHUNK boundary")
    n = hi - lo
    rng = substream(master, *key, lo // CHUNK)
    cuts = draw_disturbance(spec, rng, n)
    secs = None
    if k_secondary:
        secs = draw_disturbance(spec, rng, n * k_secondary)
        secs = secs.reshape(n, k_secondary, spec.m)
    phases = rng.uniform(size=n) if with_phase else None
    return cuts, secs, phases


def scm_batch(secs):
    """Per-trial sample covariance of (T, K, m) secondaries."""
    K = secs.shape[1]
    return np.einsum("tki,tkj->tij", secs, secs.conj(), optimize=True) / K


def herm_inv_sqrt_batch(mats, floor=1e-12):
    """Batched Hermitian inverse square root with relative eigenvalue floor."""
    lam, u = np.linalg.eigh(mats)
    lam = np.maximum(lam, floor * lam[:, -1:])
    return np.einsum("tik,tk,tjk->tij", u, 1.0 / np.sqrt(lam), u.conj(), optimize=True)


def local_whitener_batch(secs, eps_ridge):
    """Per-trial whitening operators from ridge-regularized secondary SCMs."""
    m = secs.shape[2]
    R = scm_batch(secs)
    tr = np.einsum("tii->t", R).real
    R = R + (eps_ridge / m) * tr[:, None, None] * np.eye(m)
    return herm_inv_sqrt_batch(R)


class ScoreEngine:
    """Computes every requested detector's scores for batches of trials."""

    def __init__(self, cfg, model=None):
        self.cfg = cfg
        self.spec = cfg.disturbance
        self.m = cfg.disturbance.m
        self.model = model
        self.sigma_oracle = cfg.disturbance.total_covariance()
        self.oracle_whitener = herm_inv_sqrt(self.sigma_oracle)
        roster = set(cfg.detectors)
        if FUSED in roster:
            roster.add(cfg.fusion_branch)
            roster.add(CVAE)
        self.roster = roster

    @property
    def score_kinds(self):
        """Raw-score detector kinds (FUSED is derived from branch p-values)."""
        return [k for k in (MF, NMF, AMF_SCM, ANMF_SCM, ANMF_TYLER, CVAE)
                if k in self.roster]

    def needs_secondaries(self):
        adaptive = {AMF_SCM, ANMF_SCM, ANMF_TYLER}
        return bool(adaptive & self.roster) or (
            CVAE in self.roster and self.cfg.whitening == "local")

    def prepare(self, secs, P):
        """Per-trial covariance inverses and whiteners, computed once per chunk.

        The Pd sweep reuses one prepared dict across the whole SNR grid, so
        the expensive work (Tyler fits, matrix inverses, steering norms)
        happens once per trial rather than once per grid point.
        """
        prep = {"oracle_inv": np.linalg.inv(self.sigma_oracle)}
        prep["oracle_denp"] = steering_norms(P, prep["oracle_inv"])
        if secs is not None and (AMF_SCM in self.roster or ANMF_SCM in self.roster):
            inv = np.linalg.inv(scm_batch(secs))
            prep["scm_inv"] = inv
            prep["scm_denp"] = steering_norms(P, inv)
        if secs is not None and ANMF_TYLER in self.roster:
            sig, _, _ = tyler_fp_batch(secs, tol=self.cfg.covest.tyler_tol,
                                       max_iter=self.cfg.covest.tyler_max_iter)
            inv = np.linalg.inv(sig)
            prep["tyler_inv"] = inv
            prep["tyler_denp"] = steering_norms(P, inv)
        if CVAE in self.roster and self.cfg.whitening == "local":
            prep["local_whitener"] = local_whitener_batch(secs, self.cfg.covest.eps_ridge)
        return prep

    def profiles(self, cuts, prep):
        """CVAE input stream: Doppler profiles, optionally whitened."""
        mode = self.cfg.whitening
        if mode == "raw":
            return dft_unitary(cuts)
        if mode == "oracle":
            return dft_unitary(cuts @ self.oracle_whitener.T)
        B = prep["local_whitener"]
        return dft_unitary(np.einsum("tij,tj->ti", B, cuts, optimize=True))

    def scores_prepared(self, cuts, P, prep):
        """Dict kind -> (T, B) arrays ((T,) for CVAE) for steering rows P."""
        out = {}
        if MF in self.roster or NMF in self.roster:
            mf, nmf, _ = mf_nmf_from_inv(cuts, P, prep["oracle_inv"],
                                         prep["oracle_denp"])
            if MF in self.roster:
                out[MF] = mf
            if NMF in self.roster:
                out[NMF] = nmf
        if AMF_SCM in self.roster or ANMF_SCM in self.roster:
            mf, nmf, _ = mf_nmf_from_inv(cuts, P, prep["scm_inv"], prep["scm_denp"])
            if AMF_SCM in self.roster:
                out[AMF_SCM] = mf
            if ANMF_SCM in self.roster:
                out[ANMF_SCM] = nmf
        if ANMF_TYLER in self.roster:
            _, nmf, _ = mf_nmf_from_inv(cuts, P, prep["tyler_inv"], prep["tyler_denp"])
            out[ANMF_TYLER] = nmf
        if CVAE in self.roster:
            if self.model is None:
                raise DependencyError("CVAE scoring requested before training")
            out[CVAE] = self.model.score_batch(self.profiles(cuts, prep))
        return out

    def scores(self, cuts, secs, P):
        """Single-pass scoring (prepare + evaluate) for null stages."""
        return self.scores_prepared(cuts, P, self.prepare(secs, P))


def parallel_chunks(task, bounds, jobs):
    """Run task(lo, hi) over bounds; results come back in bounds order."""
    if jobs <= 1 or len(bounds) <= 1:
        return [task(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(task, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futs]


def collect_h0_scores(engine, purpose, n_trials, jobs):
    """Concatenated raw scores of n_trials H0 trials for every roster kind."""
    cfg = engine.cfg
    P = steering_matrix(range(engine.m), engine.m)
    k = cfg.k_secondary if engine.needs_secondaries() else 0

    def task(lo, hi):
        cuts, secs, _ = draw_trial_chunk(engine.spec, k, cfg.seed, (purpose,), lo, hi)
        return engine.scores(cuts, secs, P)

    parts = parallel_chunks(task, chunk_bounds(n_trials), jobs)
    return {kind: np.concatenate([p[kind] for p in parts]) for kind in parts[0]}


class Calibration:
    """Banks, weights, thresholds and PIT decision levels for one config."""

    def __init__(self, banks, weights, thresholds, taus, pfa, fusion_branch):
        self.banks = banks
        self.weights = weights
        self.thresholds = thresholds
        self.taus = taus
        self.pfa = pfa
        self.fusion_branch = fusion_branch

    def has(self, kind):
        return kind in self.banks or (kind == FUSED and FUSED in self.thresholds)


def build_calibration(engine, null_scores, pfa):
    """Alg-2 style null calibration from H0 scores (a dict kind -> array)."""
    cfg = engine.cfg
    m = engine.m
    banks = {}
    for kind, arr in null_scores.items():
        if arr.ndim == 1:
            shared = np.sort(arr)
            banks[kind] = cal.EcdfBank(sorted_scores=[shared] * m, kind=kind)
        else:
            banks[kind] = cal.fit_ecdf([arr[:, b] for b in range(m)], kind=kind)

    if cfg.weight_schedule == "gaussian-prior":
        weights = cal.weights_gaussian_prior(cfg.b0, cfg.sigma0, m)
    elif cfg.weight_schedule == "constant":
        weights = cal.WeightSchedule(w=np.full(m, cfg.w_constant), kind="constant")
    elif CVAE in banks:
        cvae_bank = banks[CVAE]
        null_pv = [cvae_bank.pvalues(b, cvae_bank.sorted_scores[b]) for b in range(m)]
        weights = cal.weights_sigmoid(null_pv)
    else:
        # Sigmoid schedule needs CVAE nulls; without that branch the weights
        # only matter for fusion, which is equally absent.
        weights = cal.WeightSchedule(w=np.full(m, 0.5), kind="constant")

    thresholds = {kind: cal.cfar_threshold([arr[:, b] for b in range(m)] if arr.ndim == 2
                                           else [arr] * m, pfa)
                  for kind, arr in null_scores.items()}
    taus = {kind: np.array([cal.pvalue_threshold(b.sorted_scores[i].size, pfa)
                            for i in range(m)])
            for kind, b in banks.items()}

    if FUSED in engine.roster:
        branch = null_scores[engine.cfg.fusion_branch]
        cvae = null_scores[CVAE]
        fused_null = np.empty((branch.shape[0], m))
        for b in range(m):
            pa = banks[engine.cfg.fusion_branch].pvalues(b, branch[:, b])
            pc = banks[CVAE].pvalues(b, cvae)
            fused_null[:, b] = cal.fuse_logp(pa, pc, weights.w[b])
        banks[FUSED] = cal.fit_ecdf([fused_null[:, b] for b in range(m)], kind=FUSED)
        thresholds[FUSED] = cal.cfar_threshold([fused_null[:, b] for b in range(m)], pfa)
        taus[FUSED] = np.array([cal.pvalue_threshold(branch.shape[0], pfa)
                                for _ in range(m)])
    return Calibration(banks, weights, thresholds, taus, pfa, cfg.fusion_branch)


def decisions(calib, kind, scores, bins):
    """PIT decisions for raw ``scores`` at the listed Doppler bins.

    scores: (T, B) for classical kinds aligned with ``bins``; (T,) for CVAE.
    Returns boolean (T, B).
    """
    bank = calib.banks[kind]
    out = np.empty((scores.shape[0], len(bins)), dtype=bool)
    for j, b in enumerate(bins):
        col = scores if scores.ndim == 1 else scores[:, j]
        out[:, j] = bank.pvalues(b, col) <= calib.taus[kind][b]
    return out


def fused_decisions(calib, branch_scores, cvae_scores, bins):
    """Weighted log-p fusion decisions from the two branch raw scores."""
    out = np.empty((branch_scores.shape[0], len(bins)), dtype=bool)
    for j, b in enumerate(bins):
        pa = calib.banks[calib.fusion_branch].pvalues(b, branch_scores[:, j])
        pc = calib.banks[CVAE].pvalues(b, cvae_scores)
        fused = cal.fuse_logp(pa, pc, calib.weights.w[b])
        out[:, j] = calib.banks[FUSED].pvalues(b, fused) <= calib.taus[FUSED][b]
    return out


def all_decisions(engine, calib, scores, bins):
    """Decision arrays for every configured detector, dict kind -> (T, B)."""
    out = {}
    for kind in engine.cfg.detectors:
        if kind == FUSED:
            out[kind] = fused_decisions(calib, scores[engine.cfg.fusion_branch],
                                        scores[CVAE], bins)
        else:
            out[kind] = decisions(calib, kind, scores[kind], bins)
    return out


def held_out_pfa(engine, calib, n_trials, jobs):
    """Per-bin false-alarm fraction on fresh H0 trials for each detector."""
    cfg = engine.cfg
    bins = list(range(engine.m))
    P = steering_matrix(bins, engine.m)
    k = cfg.k_secondary if engine.needs_secondaries() else 0

    def task(lo, hi):
        cuts, secs, _ = draw_trial_chunk(engine.spec, k, cfg.seed,
                                         (PURPOSE_TEST_H0,), lo, hi)
        dec = all_decisions(engine, calib, engine.scores(cuts, secs, P), bins)
        return {kind: d.sum(axis=0) for kind, d in dec.items()}

    parts = parallel_chunks(task, chunk_bounds(n_trials), jobs)
    return {kind: sum(p[kind] for p in parts) / n_trials for kind in parts[0]}


def pd_curve(engine, calib, d, snr_grid_db, n_trials, jobs):
    """Detection counts across the SNR grid at Doppler bin d.

    Returns dict kind -> (n_snr,) detection fractions.  Disturbance,
    secondaries and target phase are drawn once per trial and shared across
    the grid.
    """
    cfg = engine.cfg
    p_vec = steering(d, engine.m)
    P = p_vec[None, :]
    k = cfg.k_secondary if engine.needs_secondaries() else 0
    snr_lin = 10.0 ** (np.asarray(snr_grid_db) / 10.0)

    def task(lo, hi):
        cuts, secs, phases = draw_trial_chunk(
            engine.spec, k, cfg.seed, (PURPOSE_TEST_H1, d), lo, hi, with_phase=True)
        alpha_unit = np.exp(2j * np.pi * phases)
        prep = engine.prepare(secs, P)
        counts = {kind: np.zeros(snr_lin.size, dtype=np.int64)
                  for kind in cfg.detectors}
        for i, s in enumerate(snr_lin):
            z1 = cuts + (np.sqrt(s / engine.m) * alpha_unit)[:, None] * p_vec
            dec = all_decisions(engine, calib,
                                engine.scores_prepared(z1, P, prep), [d])
            for kind, dmat in dec.items():
                counts[kind][i] += int(dmat[:, 0].sum())
        return counts

    parts = parallel_chunks(task, chunk_bounds(n_trials), jobs)
    return {kind: sum(p[kind] for p in parts) / n_trials for kind in parts[0]}
