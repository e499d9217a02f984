"""End-to-end experiment orchestration for one configured environment.

Stage order (the whole detection recipe):

1. train      draw H0 profiles (disjoint substream), fit the CVAE
2. calibrate  H0 scores for every detector -> per-bin ECDF banks, fusion
              weights, fused null, thresholds
3. cfar       held-out H0 trials -> empirical per-bin false-alarm rates
4. surfaces   H1 trials across the (SNR, Doppler) grid -> Pd estimates
5. emit       checkpoint, loss trace, calibration sidecar, CSV + SVG reports

Each stage draws from its own purpose-tagged substream of the master seed,
so the splits are disjoint and any stage can be reproduced in isolation.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import calibrate as cal
from ..cvae.model import CvaeModel
from ..cvae.train import save_checkpoint, train, write_loss_trace
from ..errors import DependencyError
from ..simulate import steering, substream
from . import engine as eng
from . import report

_WILSON_Z = 1.96


def wilson_ci(k, n, z=_WILSON_Z):
    """Wilson score interval; returns (p_hat, half_width)."""
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = max(center - half, 0.0)
    hi = min(center + half, 1.0)
    return p, (hi - lo) / 2.0


@dataclass
class PdSurface:
    """Detection probability over the (SNR, Doppler) grid for one detector."""

    detector: str
    preprocessing: str
    snr_db: np.ndarray          # (S,)
    doppler_bins: np.ndarray    # (D,)
    pd: np.ndarray              # (D, S)
    ci: np.ndarray              # (D, S) CI half-widths
    trials: int


@dataclass
class PipelineResult:
    cfg: object
    model: object
    calibration: object
    pfa_hat: dict               # kind -> (m,) held-out per-bin false-alarm rate
    surfaces: dict              # kind -> PdSurface
    loss_trace: list
    timings: dict = field(default_factory=dict)
    n_test_h0: int = 0


def train_stage(cfg, log=None):
    """Draw the H0 training stream and fit the CVAE; returns (model, trace)."""
    say = log or (lambda msg: None)
    proto = eng.ScoreEngine(cfg, model=None)
    needs_sec = cfg.whitening == "local"
    k = cfg.k_secondary if needs_sec else 0

    def task(lo, hi):
        cuts, secs, _ = eng.draw_trial_chunk(cfg.disturbance, k, cfg.seed,
                                             (eng.PURPOSE_TRAIN,), lo, hi)
        prep = {}
        if needs_sec:
            prep["local_whitener"] = eng.local_whitener_batch(
                secs, cfg.covest.eps_ridge)
        return proto.profiles(cuts, prep)

    parts = eng.parallel_chunks(task, eng.chunk_bounds(cfg.n_train), cfg.jobs)
    profiles = np.concatenate(parts)
    say(f"training on {profiles.shape[0]} {cfg.whitening} profiles")
    init_seed = int(substream(cfg.seed, eng.PURPOSE_TRAIN, 0).integers(2 ** 62))
    model = CvaeModel.create(cfg.cvae.architecture(cfg.disturbance.m), seed=init_seed)
    trace = train(model, profiles, cfg.cvae.train_config(init_seed))
    return model, trace


def run_pipeline(cfg, emit=True, log=None):
    """Execute every stage; optionally write all artifacts under cfg.out."""
    say = log or (lambda msg: None)
    timings = {}
    t0 = time.perf_counter()

    model, trace = (None, [])
    needs_model = eng.CVAE in cfg.detectors or eng.FUSED in cfg.detectors
    if needs_model:
        model, trace = train_stage(cfg, log=log)
        timings["train"] = time.perf_counter() - t0
        say(f"trained CVAE ({timings['train']:.1f}s, "
            f"final loss {trace[-1]['total']:.4g})")

    engine = eng.ScoreEngine(cfg, model=model)

    t1 = time.perf_counter()
    null_scores = eng.collect_h0_scores(engine, eng.PURPOSE_CAL, cfg.n_cal, cfg.jobs)
    calib = eng.build_calibration(engine, null_scores, cfg.pfa)
    timings["calibrate"] = time.perf_counter() - t1
    say(f"calibrated on {cfg.n_cal} H0 trials ({timings['calibrate']:.1f}s)")

    t2 = time.perf_counter()
    pfa_hat = eng.held_out_pfa(engine, calib, cfg.n_test_h0, cfg.jobs)
    timings["cfar"] = time.perf_counter() - t2
    say(f"held-out false-alarm check on {cfg.n_test_h0} trials "
        f"({timings['cfar']:.1f}s)")

    t3 = time.perf_counter()
    snr = np.asarray(cfg.snr_grid_db, dtype=np.float64)
    bins = np.asarray(cfg.doppler_bins, dtype=np.int64)
    pd = {kind: np.empty((bins.size, snr.size)) for kind in cfg.detectors}
    for j, d in enumerate(cfg.doppler_bins):
        curves = eng.pd_curve(engine, calib, d, snr, cfg.trials_per_point, cfg.jobs)
        for kind in cfg.detectors:
            pd[kind][j] = curves[kind]
        say(f"swept Doppler bin {d}")
    surfaces = {}
    for kind in cfg.detectors:
        k_counts = np.rint(pd[kind] * cfg.trials_per_point)
        ci = np.empty_like(pd[kind])
        for idx in np.ndindex(ci.shape):
            _, ci[idx] = wilson_ci(k_counts[idx], cfg.trials_per_point)
        surfaces[kind] = PdSurface(detector=kind, preprocessing=cfg.whitening,
                                   snr_db=snr, doppler_bins=bins, pd=pd[kind],
                                   ci=ci, trials=cfg.trials_per_point)
    timings["surfaces"] = time.perf_counter() - t3
    timings["total"] = time.perf_counter() - t0
    say(f"surfaces done ({timings['surfaces']:.1f}s)")

    result = PipelineResult(cfg=cfg, model=model, calibration=calib,
                            pfa_hat=pfa_hat, surfaces=surfaces, loss_trace=trace,
                            timings=timings, n_test_h0=cfg.n_test_h0)
    if emit:
        emit_artifacts(result)
    return result


def emit_artifacts(result):
    cfg = result.cfg
    os.makedirs(cfg.out, exist_ok=True)
    if result.model is not None:
        save_checkpoint(result.model, os.path.join(cfg.out, "cvae.ckpt"),
                        seed=cfg.seed, train_config=cfg.cvae.train_config(cfg.seed))
        write_loss_trace(result.loss_trace, os.path.join(cfg.out, "loss_trace.csv"))
    calib = result.calibration
    cal.save_calibration(os.path.join(cfg.out, "calibration.bin"), calib.banks,
                         calib.weights, calib.thresholds, calib.pfa,
                         meta={"seed": cfg.seed, "whitening": cfg.whitening})
    cal.write_calibration_summary(os.path.join(cfg.out, "calibration_summary.csv"),
                                  calib.banks, calib.weights, calib.thresholds)
    report.write_pfa_csv(os.path.join(cfg.out, "pfa_holdout.csv"), result.pfa_hat,
                         cfg.pfa, result.n_test_h0)
    report.emit_report(result.surfaces, cfg.out)


def evaluate_detector(engine, calib, kind, snr_db, d, trials,
                      threshold_override=None, jobs=1):
    """Monte Carlo P_d of one detector at one (SNR, Doppler) point.

    Decisions use the calibrated PIT rule unless ``threshold_override`` is
    given, in which case the raw statistic is compared against it (this is
    how the analytic matched-filter threshold is evaluated).  Returns
    (pd_hat, ci_half_width).
    """
    if threshold_override is None and (calib is None or not calib.has(kind)):
        raise DependencyError(f"no calibration available for detector {kind}")
    cfg = engine.cfg
    p_vec = steering(d, engine.m)
    P = p_vec[None, :]
    k = cfg.k_secondary if engine.needs_secondaries() else 0
    s_lin = 10.0 ** (snr_db / 10.0)

    def task(lo, hi):
        cuts, secs, phases = eng.draw_trial_chunk(
            cfg.disturbance, k, cfg.seed, (eng.PURPOSE_TEST_H1, d), lo, hi,
            with_phase=True)
        z1 = cuts + (np.sqrt(s_lin / engine.m) * np.exp(2j * np.pi * phases))[:, None] * p_vec
        scores = engine.scores(z1, secs, P)
        if threshold_override is not None:
            col = scores[kind] if scores[kind].ndim == 1 else scores[kind][:, 0]
            return int((col >= threshold_override).sum())
        dec = eng.all_decisions(engine, calib, scores, [d])
        return int(dec[kind][:, 0].sum())

    hits = sum(eng.parallel_chunks(task, eng.chunk_bounds(trials), jobs))
    return wilson_ci(hits, trials)
