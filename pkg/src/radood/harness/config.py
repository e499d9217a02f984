"""Experiment configuration: declarative TOML file plus CLI overrides."""

import sys
from dataclasses import dataclass, field

import numpy as np

from ..cvae.model import ConvBlockSpec, CvaeArchitecture
from ..cvae.train import TrainConfig
from ..errors import ConfigError
from ..simulate import DISTURBANCE_KINDS, DisturbanceSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DETECTOR_ROSTER = ("MF", "NMF", "AMF-SCM", "ANMF-SCM", "ANMF-Tyler", "CVAE", "FUSED")
WHITENING_MODES = ("raw", "local", "oracle")
WEIGHT_SCHEDULES = ("sigmoid", "gaussian-prior", "constant")


@dataclass
class CvaeSettings:
    latent_dim: int = 8
    blocks: tuple = ((8, 5, 2), (16, 5, 2))
    activation: str = "modrelu"
    norm: bool = True
    epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta: float = 0.01

    def architecture(self, m):
        return CvaeArchitecture(
            input_len=m,
            blocks=tuple(ConvBlockSpec(*b) for b in self.blocks),
            activation=self.activation,
            latent_dim=self.latent_dim,
            norm=self.norm,
        )

    def train_config(self, seed):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, beta=self.beta,
                           seed=seed)


@dataclass
class CovestSettings:
    eps_ridge: float = 1e-2
    # Monte Carlo default; the covariance module itself defaults to 1e-10.
    # Calibration and evaluation share the estimator map, so the CFAR
    # property is insensitive to this tolerance.
    tyler_tol: float = 1e-6
    tyler_max_iter: int = 100


@dataclass
class ExperimentConfig:
    disturbance: DisturbanceSpec
    seed: int = 0
    out: str = "runs/out"
    jobs: int = 1
    k_secondary: int = 32
    pfa: float = 1e-2
    snr_grid_db: tuple = tuple(float(s) for s in range(-5, 31))
    doppler_bins: tuple = (0,)
    trials_per_point: int = 10_000
    n_train: int = 16_384
    n_cal: int = 200_000
    n_test_h0: int = 100_000
    detectors: tuple = DETECTOR_ROSTER
    whitening: str = "raw"
    weight_schedule: str = "sigmoid"
    sigma0: float = 1.5
    b0: int = 0
    w_constant: float = 0.5
    fusion_branch: str = "ANMF-Tyler"
    cvae: CvaeSettings = field(default_factory=CvaeSettings)
    covest: CovestSettings = field(default_factory=CovestSettings)

    def __post_init__(self):
        m = self.disturbance.m
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must be nonempty")
        if not self.doppler_bins:
            raise ConfigError("doppler_bins must be nonempty")
        if any(not 0 <= d < m for d in self.doppler_bins):
            raise ConfigError(f"doppler_bins must lie in [0, {m})")
        if not 0.0 < self.pfa < 1.0:
            raise ConfigError(f"pfa must lie in (0, 1), got {self.pfa}")
        min_trials = int(np.ceil(10.0 / self.pfa))
        if self.trials_per_point < min_trials or self.n_test_h0 < min_trials:
            raise ConfigError(
                f"trials must be at least 10/pfa = {min_trials} for threshold validity")
        if self.n_cal < min_trials:
            raise ConfigError(f"n_cal must be at least 10/pfa = {min_trials}")
        if self.whitening not in WHITENING_MODES:
            raise ConfigError(f"whitening must be one of {WHITENING_MODES}")
        if self.weight_schedule not in WEIGHT_SCHEDULES:
            raise ConfigError(f"weight_schedule must be one of {WEIGHT_SCHEDULES}")
        unknown = set(self.detectors) - set(DETECTOR_ROSTER)
        if unknown:
            raise ConfigError(f"unknown detectors {sorted(unknown)}")
        if self.k_secondary <= m:
            raise ConfigError(
                f"k_secondary must exceed m={m} for Tyler to exist, got {self.k_secondary}")
        if not 0.0 <= self.w_constant <= 1.0:
            raise ConfigError("w_constant must lie in [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


@dataclass
class CubeSettings:
    """Parameters of the ``simulate`` subcommand ([cube] table)."""

    n_ranges: int = 64
    n_pulses: int = 256
    # Each target is (gate, pulse_offset, doppler_bin, snr_db) with random phase.
    targets: tuple = ()


def cube_settings_from_dict(raw):
    c = raw.get("cube", {})
    return CubeSettings(
        n_ranges=int(c.get("n_ranges", 64)),
        n_pulses=int(c.get("n_pulses", 256)),
        targets=tuple(tuple(t) for t in c.get("targets", [])),
    )


def _snr_grid(exp):
    if exp.get("snr_grid_db") is not None:
        return tuple(float(s) for s in exp["snr_grid_db"])
    start = float(exp.get("snr_db_start", -5.0))
    stop = float(exp.get("snr_db_stop", 30.0))
    step = float(exp.get("snr_db_step", 1.0))
    n = int(round((stop - start) / step)) + 1
    return tuple(start + i * step for i in range(n))


def load_config(path, seed=None, out=None, jobs=None):
    """Parse a TOML experiment file; keyword arguments override the file."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return config_from_dict(raw, seed=seed, out=out, jobs=jobs)


def config_from_dict(raw, seed=None, out=None, jobs=None):
    try:
        d = raw.get("disturbance", {})
        spec = DisturbanceSpec(
            kind=d.get("kind", "cGN+AWGN"),
            rho=float(d.get("rho", 0.5)),
            mu_texture=float(d.get("mu_texture", 1.0)),
            sigma_n2=float(d.get("sigma_n2", 0.0)),
            m=int(d.get("m", 16)),
        )
        exp = raw.get("experiment", {})
        cv = raw.get("cvae", {})
        ce = raw.get("covest", {})
        cfg = ExperimentConfig(
            disturbance=spec,
            seed=int(raw.get("seed", 0)) if seed is None else int(seed),
            out=str(raw.get("out", "runs/out")) if out is None else str(out),
            jobs=int(raw.get("jobs", 1)) if jobs is None else int(jobs),
            k_secondary=int(exp.get("k_secondary", 32)),
            pfa=float(exp.get("pfa", 1e-2)),
            snr_grid_db=_snr_grid(exp),
            doppler_bins=tuple(int(b) for b in exp.get("doppler_bins", [0])),
            trials_per_point=int(exp.get("trials_per_point", 10_000)),
            n_train=int(exp.get("n_train", 16_384)),
            n_cal=int(exp.get("n_cal", 200_000)),
            n_test_h0=int(exp.get("n_test_h0", 100_000)),
            detectors=tuple(exp.get("detectors", list(DETECTOR_ROSTER))),
            whitening=str(exp.get("whitening", "raw")),
            weight_schedule=str(exp.get("weight_schedule", "sigmoid")),
            sigma0=float(exp.get("sigma0", 1.5)),
            b0=int(exp.get("b0", 0)),
            w_constant=float(exp.get("w_constant", 0.5)),
            fusion_branch=str(exp.get("fusion_branch", "ANMF-Tyler")),
            cvae=CvaeSettings(
                latent_dim=int(cv.get("latent_dim", 8)),
                blocks=tuple(tuple(int(v) for v in b)
                             for b in cv.get("blocks", [[8, 5, 2], [16, 5, 2]])),
                activation=str(cv.get("activation", "modrelu")),
                norm=bool(cv.get("norm", True)),
                epochs=int(cv.get("epochs", 40)),
                batch_size=int(cv.get("batch_size", 128)),
                learning_rate=float(cv.get("learning_rate", 1e-3)),
                beta=float(cv.get("beta", 0.01)),
            ),
            covest=CovestSettings(
                eps_ridge=float(ce.get("eps_ridge", 1e-2)),
                tyler_tol=float(ce.get("tyler_tol", 1e-6)),
                tyler_max_iter=int(ce.get("tyler_max_iter", 100)),
            ),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg
