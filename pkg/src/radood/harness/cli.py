"""Command line interface.

Subcommands: simulate, train, calibrate, detect, report, pipeline.
Configuration comes from one TOML file; --seed, --out and --jobs override it.
Exit codes: 0 success, 2 config error, 3 numeric/training failure, 4 io error.
"""

import argparse
import os
import sys

from .. import calibrate as cal
from ..errors import (ConfigError, ConvergenceError, DependencyError, FormatError,
                      InsufficientDataError, InvalidArgumentError, NumericError,
                      RadoodError, SingularMatrixError, TrainingError)
from ..simulate import TargetSpec, simulate_cube
from ..whitening import read_cube, write_cube

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parser():
    p = argparse.ArgumentParser(prog="radood",
                                description="Radar OOD detection experiment harness")
    sub = p.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("simulate", "synthesize a range-pulse cube file"),
        ("train", "train the CVAE on background profiles"),
        ("calibrate", "build ECDF banks, weights and thresholds"),
        ("detect", "run calibrated detectors over a cube file"),
        ("report", "regenerate SVG figures from a surfaces CSV"),
        ("pipeline", "run every stage end to end"),
    ]:
        q = sub.add_parser(name, help=doc)
        q.add_argument("-c", "--config", required=(name != "report"),
                       help="TOML experiment configuration")
        q.add_argument("--seed", type=int, default=None, help="master seed override")
        q.add_argument("--out", default=None, help="output directory override")
        q.add_argument("--jobs", type=int, default=None, help="worker bound override")
        if name == "calibrate":
            q.add_argument("--model", default=None, help="CVAE checkpoint path")
        if name == "detect":
            q.add_argument("--cube", required=True, help="input cube file")
            q.add_argument("--model", default=None, help="CVAE checkpoint path")
            q.add_argument("--calibration", required=True,
                           help="calibration sidecar path")
        if name == "report":
            q.add_argument("--surfaces", required=True, help="pd_surfaces.csv path")
    return p


def _load(args):
    from .config import load_config
    return load_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)


def _cmd_simulate(args):
    from .config import cube_settings_from_dict
    cfg = _load(args)
    raw = _read_raw(args.config)
    cube_cfg = cube_settings_from_dict(raw)
    targets = []
    for gate, offset, d, snr_db in cube_cfg.targets:
        targets.append((int(gate), int(offset),
                        TargetSpec(d=int(d), snr=10.0 ** (float(snr_db) / 10.0))))
    cube = simulate_cube(cfg.disturbance, cube_cfg.n_ranges, cube_cfg.n_pulses,
                         targets, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "cube.cpxc")
    write_cube(cube, path)
    print(f"wrote {path} ({cube.n_ranges} gates x {cube.n_pulses} pulses, "
          f"{len(targets)} targets)")
    return EXIT_OK


def _read_raw(path):
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc


def _cmd_train(args):
    from ..cvae.train import save_checkpoint, write_loss_trace
    from .pipeline import train_stage
    cfg = _load(args)
    model, trace = train_stage(cfg, log=print)
    os.makedirs(cfg.out, exist_ok=True)
    save_checkpoint(model, os.path.join(cfg.out, "cvae.ckpt"), seed=cfg.seed,
                    train_config=cfg.cvae.train_config(cfg.seed))
    write_loss_trace(trace, os.path.join(cfg.out, "loss_trace.csv"))
    print(f"wrote {cfg.out}/cvae.ckpt (final loss {trace[-1]['total']:.5g})")
    return EXIT_OK


def _cmd_calibrate(args):
    from ..cvae.train import load_checkpoint
    from . import engine as eng
    cfg = _load(args)
    model = None
    if args.model:
        model, _ = load_checkpoint(args.model)
    elif eng.CVAE in cfg.detectors or eng.FUSED in cfg.detectors:
        raise DependencyError("calibration of the CVAE/fused detectors needs --model")
    engine = eng.ScoreEngine(cfg, model=model)
    null_scores = eng.collect_h0_scores(engine, eng.PURPOSE_CAL, cfg.n_cal, cfg.jobs)
    calib = eng.build_calibration(engine, null_scores, cfg.pfa)
    os.makedirs(cfg.out, exist_ok=True)
    cal.save_calibration(os.path.join(cfg.out, "calibration.bin"), calib.banks,
                         calib.weights, calib.thresholds, calib.pfa,
                         meta={"seed": cfg.seed, "whitening": cfg.whitening})
    cal.write_calibration_summary(os.path.join(cfg.out, "calibration_summary.csv"),
                                  calib.banks, calib.weights, calib.thresholds)
    print(f"wrote {cfg.out}/calibration.bin and calibration_summary.csv")
    return EXIT_OK


def _cmd_detect(args):
    from ..cvae.train import load_checkpoint
    from . import engine as eng
    from .ingest import detect_cube, write_detections_csv
    cfg = _load(args)
    cube = read_cube(args.cube)
    banks, weights, thresholds, pfa, _ = cal.load_calibration(args.calibration)
    taus = {kind: [cal.pvalue_threshold(b.sorted_scores[i].size, pfa)
                   for i in range(b.n_bins)] for kind, b in banks.items()}
    calib = eng.Calibration(banks, weights, thresholds, taus, pfa,
                            cfg.fusion_branch)
    model = None
    if args.model:
        model, _ = load_checkpoint(args.model)
    rows = detect_cube(cube, cfg, calib, model=model)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "detections.csv")
    write_detections_csv(rows, path)
    n_hits = sum(r["decision"] for r in rows)
    print(f"wrote {path} ({len(rows)} records, {n_hits} declared)")
    return EXIT_OK


def _cmd_report(args):
    from .report import emit_report, read_surfaces_csv
    out = args.out or os.path.dirname(os.path.abspath(args.surfaces))
    surfaces = read_surfaces_csv(args.surfaces)
    written = emit_report(surfaces, out)
    print("\n".join(written))
    return EXIT_OK


def _cmd_pipeline(args):
    from .pipeline import run_pipeline
    cfg = _load(args)
    result = run_pipeline(cfg, emit=True, log=print)
    print(f"artifacts in {cfg.out} (total {result.timings['total']:.1f}s)")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "detect": _cmd_detect,
    "report": _cmd_report,
    "pipeline": _cmd_pipeline,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, NumericError, ConvergenceError, SingularMatrixError,
            InsufficientDataError, DependencyError, RadoodError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
