"""Cube-file detection bridge: run calibrated detectors over a range-pulse cube.

This is the ingestion path for user-supplied recordings shaped like maritime
radar captures (gates x pulses).  Each gate's covariance comes from its
neighborhood snapshots (never from the gate itself): a ridge-regularized SCM
for the ANMF-SCM flavor and whitening, and a Tyler fixed point when the
ANMF-Tyler branch is configured.  Calibration banks must come from matching
background data for the p-values to mean anything.
"""

import csv

import numpy as np

from .. import calibrate as cal
from ..covariance import ridge_regularize, tyler_fp
from ..detectors import ANMF_SCM, ANMF_TYLER, mf_nmf_from_inv
from ..linalg import dft_unitary, herm_inv_sqrt
from ..whitening import WhitenConfig, gather_neighborhood, segment
from . import engine as eng

_CUBE_KINDS = (ANMF_SCM, ANMF_TYLER, eng.CVAE, eng.FUSED)


def detect_cube(cube, cfg, calib, model=None, stride=1, n_adj=8):
    """Per-(gate, snapshot, bin) detection records for a cube.

    Detection maps default to the sliding stride (1) so every cell is
    covered and the reference neighborhoods stay well populated; disjoint
    strides are for training-set construction.  Returns a list of dict
    rows: gate, pulse_start, doppler_bin, detector, score, pvalue, decision.
    """
    m = cfg.disturbance.m
    wcfg = WhitenConfig(m=m, stride=stride, n_adj=n_adj, guard=0,
                        eps_ridge=cfg.covest.eps_ridge)
    by_gate = {}
    starts_by_gate = {}
    for idx, vec in segment(cube, wcfg.m, wcfg.stride):
        by_gate.setdefault(idx.r, []).append(vec)
        starts_by_gate.setdefault(idx.r, []).append(idx.p)
    by_gate = {g: np.asarray(v) for g, v in by_gate.items()}

    kinds = [k for k in cfg.detectors if k in _CUBE_KINDS]
    if eng.CVAE in kinds and model is None:
        kinds = [k for k in kinds if k not in (eng.CVAE, eng.FUSED)]
    use_fused = eng.FUSED in kinds and calib.fusion_branch in kinds
    P = eng.steering_matrix(range(m), m)
    rows = []

    def emit(gate, p_start, b, kind, score):
        pv = cal.pit_pvalue(calib.banks[kind], b, score)
        rows.append({"gate": gate, "pulse_start": p_start, "doppler_bin": b,
                     "detector": kind, "score": float(score), "pvalue": pv,
                     "decision": bool(pv <= calib.taus[kind][b])})

    for r in sorted(by_gate):
        Yref = gather_neighborhood(by_gate, r, wcfg, n_ranges=cube.n_ranges)
        scm_reg = ridge_regularize(Yref.T @ Yref.conj() / Yref.shape[0],
                                   wcfg.eps_ridge)
        Y = by_gate[r]
        stats = {}
        if ANMF_SCM in kinds:
            _, stats[ANMF_SCM], _ = mf_nmf_from_inv(Y, P, np.linalg.inv(scm_reg))
        if ANMF_TYLER in kinds:
            est = tyler_fp(Yref)
            _, stats[ANMF_TYLER], _ = mf_nmf_from_inv(Y, P, np.linalg.inv(est.matrix))
        cvae_scores = None
        if eng.CVAE in kinds:
            prof = dft_unitary(Y if cfg.whitening == "raw"
                               else Y @ herm_inv_sqrt(scm_reg).T)
            cvae_scores = model.score_batch(prof)
        for si, p_start in enumerate(starts_by_gate[r]):
            for b in range(m):
                for kind in (ANMF_SCM, ANMF_TYLER):
                    if kind in stats:
                        emit(r, p_start, b, kind, stats[kind][si, b])
                if cvae_scores is not None:
                    emit(r, p_start, b, eng.CVAE, cvae_scores[si])
                if use_fused and cvae_scores is not None:
                    pa = cal.pit_pvalue(calib.banks[calib.fusion_branch], b,
                                        stats[calib.fusion_branch][si, b])
                    pc = cal.pit_pvalue(calib.banks[eng.CVAE], b, cvae_scores[si])
                    emit(r, p_start, b, eng.FUSED,
                         cal.fuse_logp(pa, pc, calib.weights.w[b]))
    return rows


def write_detections_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["gate", "pulse_start", "doppler_bin", "detector", "score",
                    "pvalue", "decision"])
        for row in rows:
            w.writerow([row["gate"], row["pulse_start"], row["doppler_bin"],
                        row["detector"], repr(row["score"]),
                        repr(row["pvalue"]), int(row["decision"])])
