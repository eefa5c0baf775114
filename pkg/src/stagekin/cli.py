"""Command-line interface: ``stagekin simulate|calibrate|predict|evaluate|consistency``.

Exit codes: 0 success, 2 usage or parse error, 3 I/O error, 4 numerical
degeneracy. All lengths are millimetres and all angles degrees.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import simulator as sim
from .dataio import DatasetError, StageConfig, dataset_checksum, dumps_dataset, load_dataset, to_millimeters
from .evaluation import consistency_report, evaluate_accuracy, evaluate_orientation, write_scatter_csvs
from .geom import DegenerateInputError
from .model import Theta, calibrate, ground_truth_batch, ground_truth_in_cb, load_theta, save_theta

log = logging.getLogger("stagekin")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    level = os.environ.get("STAGEKIN_LOG", "warn").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _stage_values(text: str) -> StageConfig:
    try:
        return StageConfig.from_seq(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected four comma-separated numbers: {exc}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"cannot parse {path}: {exc}", EXIT_USAGE) from exc


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out_dir / name).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write to {out_dir}: {exc}", EXIT_IO) from exc


def _manifest(command: str, inputs: list[Path], outputs: list[Path], seed=None, **extra) -> str:
    data = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    data.update(extra)
    return json.dumps(data, indent=1) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"


def _load_theta(path) -> Theta:
    data = _read_json(path)
    try:
        return Theta.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid theta file {path}: {exc}", EXIT_USAGE) from exc


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

SPEC_KEYS = {
    "seed", "stage_seed", "preset", "angles_deg", "unit", "voxel_size_mm",
    "cornea_samples", "eyeball_samples", "noise", "tracker",
}
NOISE_KEYS = {"corner_sigma_mm", "surface_sigma_mm"}
TRACKER_KEYS = {"bias_mm", "sigma_mm", "sigma_along_bias_mm", "axis_noise_deg", "referencing_P", "configs"}


def parse_sim_spec(spec: dict, seed_override: int | None = None) -> dict:
    """Validate a simulation spec; returns the resolved settings."""
    if not isinstance(spec, dict):
        raise ValueError("simulation spec must be a JSON object")
    unknown = set(spec) - SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown spec keys: {sorted(unknown)}")
    preset = spec.get("preset", "measured")
    if "angles_deg" in spec:
        angles = tuple(float(a) for a in spec["angles_deg"])
        if len(angles) != 3:
            raise ValueError("angles_deg needs three values")
    elif preset == "measured":
        angles = sim.MEASURED_ANGLES
    elif preset == "orthogonal":
        angles = sim.ORTHOGONAL_ANGLES
    else:
        raise ValueError(f"unknown preset {preset!r}")
    noise = spec.get("noise", {})
    tracker = spec.get("tracker", {})
    if not isinstance(noise, dict) or set(noise) - NOISE_KEYS:
        raise ValueError(f"noise must be an object with keys {sorted(NOISE_KEYS)}")
    if not isinstance(tracker, dict) or set(tracker) - TRACKER_KEYS:
        raise ValueError(f"tracker must be an object with keys {sorted(TRACKER_KEYS)}")
    seed = int(spec.get("seed", 0)) if seed_override is None else int(seed_override)
    along = tracker.get("sigma_along_bias_mm", sim.TRACKER_SIGMA_ALONG_BIAS_MM)
    noise_spec = sim.NoiseSpec(
        corner_sigma_mm=float(noise.get("corner_sigma_mm", 0.0)),
        surface_sigma_mm=float(noise.get("surface_sigma_mm", 0.0)),
        tracker_bias_mm=tuple(tracker.get("bias_mm", sim.TRACKER_BIAS_MM)),
        tracker_sigma_mm=float(tracker.get("sigma_mm", sim.TRACKER_SIGMA_MM)),
        tracker_sigma_along_bias_mm=None if along is None else float(along),
        axis_noise_deg=float(tracker.get("axis_noise_deg", sim.AXIS_NOISE_DEG)),
        seed=seed,
    )
    configs = tracker.get("configs", "standard")
    if configs == "standard":
        configs = list(sim.EVAL_CONFIGS)
    else:
        configs = [StageConfig.from_seq(c) for c in configs]
    unit = spec.get("unit", "mm")
    if unit not in ("mm", "voxel"):
        raise ValueError(f"unit must be 'mm' or 'voxel', got {unit!r}")
    stage = sim.synthesize_stage(
        angles,
        seed=int(spec.get("stage_seed", 0)),
        cornea_samples=int(spec.get("cornea_samples", 60)),
        eyeball_samples=int(spec.get("eyeball_samples", 200)),
    )
    return {
        "stage": stage,
        "noise": noise_spec,
        "configs": configs,
        "referencing": StageConfig.from_seq(tracker.get("referencing_P", sim.REFERENCING_POSE.as_tuple())),
        "unit": unit,
        "voxel_size_mm": float(spec.get("voxel_size_mm", 0.025)),
        "seed": seed,
    }


def _noise_to_dict(noise: sim.NoiseSpec) -> dict:
    return {
        "corner_sigma_mm": noise.corner_sigma_mm,
        "surface_sigma_mm": noise.surface_sigma_mm,
        "tracker_sigma_mm": noise.tracker_sigma_mm,
        "tracker_sigma_along_bias_mm": noise.tracker_sigma_along_bias_mm,
        "tracker_bias_mm": list(noise.tracker_bias_mm),
        "axis_noise_deg": noise.axis_noise_deg,
        "seed": noise.seed,
    }


def cmd_simulate(args) -> int:
    spec = {} if args.spec is None else _read_json(args.spec)
    try:
        cfg = parse_sim_spec(spec, args.seed)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid simulation spec: {exc}", EXIT_USAGE) from exc
    ds = sim.generate_dataset(cfg["stage"], noise=cfg["noise"], unit=cfg["unit"],
                              voxel_size_mm=cfg["voxel_size_mm"])
    est = sim.simulate_tracker(cfg["stage"], cfg["configs"], cfg["referencing"], cfg["noise"])
    truth = cfg["stage"].to_dict()
    truth["noise"] = _noise_to_dict(cfg["noise"])
    out = Path(args.out)
    files = {
        "dataset.json": dumps_dataset(ds),
        "truth.json": _dump(truth),
        "estimates.json": _dump(sim.estimates_to_dict(est, cfg["referencing"])),
    }
    _write_outputs(out, files)
    inputs = [Path(args.spec)] if args.spec else []
    _write_outputs(out, {"manifest.json": _manifest(
        "simulate", inputs, [out / n for n in files], seed=cfg["seed"],
        dataset_checksum=dataset_checksum(ds),
    )})
    log.info("wrote %d scans and %d tracker estimates to %s", len(ds.scans), len(est), out)
    return EXIT_OK


# --------------------------------------------------------------------------
# calibrate / predict
# --------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from exc
    handler = logging.FileHandler(out / "calibration.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(logging.INFO)
    pkg_log = logging.getLogger("stagekin")
    prev_level = pkg_log.level
    pkg_log.addHandler(handler)
    pkg_log.setLevel(min(logging.INFO, logging.getLogger().getEffectiveLevel()))
    try:
        try:
            ds = load_dataset(args.dataset)
        except DatasetError as exc:
            code = EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_USAGE
            raise CliError(str(exc), code) from exc
        if ds.unit == "voxel":
            log.info("dataset in voxels; converting with %g mm voxels", ds.voxel_size_mm)
            ds = to_millimeters(ds)
        try:
            theta = calibrate(ds)
        except DegenerateInputError as exc:
            raise CliError(f"calibration failed: {exc}", EXIT_DEGENERATE) from exc
        theta_path = out / "theta.json"
        save_theta(theta, theta_path)
        log.info("calibrated model written to %s", theta_path)
    finally:
        pkg_log.removeHandler(handler)
        pkg_log.setLevel(prev_level)
        handler.close()
    _write_outputs(out, {"manifest.json": _manifest(
        "calibrate", [Path(args.dataset)], [theta_path], theta_checksum=_sha256(theta_path),
        dataset_checksum=theta.dataset_checksum,
    )})
    return EXIT_OK


def cmd_predict(args) -> int:
    theta = _load_theta(args.theta)
    truth = ground_truth_in_cb(theta, args.P, args.ref_P)
    rows = {"z_c": truth.z_c, "z_e": truth.z_e, "axis": truth.geometrical_axis}
    if args.format == "csv":
        print("name,x,y,z")
        for name, v in rows.items():
            print(",".join([name] + [repr(float(c)) for c in v]))
    else:
        print(json.dumps({k: v.tolist() for k, v in rows.items()}, indent=1))
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate / consistency
# --------------------------------------------------------------------------


def _evaluate_once(theta, configs, ref, z_star, axes_star) -> dict:
    truths = ground_truth_batch(theta, configs, ref)
    report = evaluate_accuracy(z_star, [t.z_c for t in truths], configs)
    if len(configs) >= 2:
        report.mean_rel_angle_deg = evaluate_orientation(axes_star, [t.geometrical_axis for t in truths])
    return report


def cmd_evaluate(args) -> int:
    theta = _load_theta(args.theta)
    try:
        ref, estimates = sim.estimates_from_dict(_read_json(args.estimates))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid estimates file {args.estimates}: {exc}", EXIT_USAGE) from exc
    configs = [e.config for e in estimates]
    if args.configs is not None:
        raw = _read_json(args.configs)
        try:
            configs = [StageConfig.from_seq(c) for c in raw]
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid configs file: {exc}", EXIT_USAGE) from exc
        if len(configs) != len(estimates):
            raise CliError(
                f"{len(configs)} configurations but {len(estimates)} estimates", EXIT_USAGE
            )
    if args.ref_P is not None:
        ref = args.ref_P
    if not estimates:
        raise CliError("estimates file holds no estimates", EXIT_USAGE)

    report = _evaluate_once(
        theta, configs, ref,
        np.array([e.z_c_star for e in estimates]),
        np.array([e.axis_star for e in estimates]),
    )
    result = report.to_dict()
    result["theta_checksum"] = _sha256(Path(args.theta))
    result["referencing_P"] = list(ref.as_tuple())

    if args.seeds:
        if args.truth is None:
            raise CliError("--seeds needs --truth to regenerate tracker estimates", EXIT_USAGE)
        tdata = _read_json(args.truth)
        try:
            noise_kw = tdata.pop("noise")
            truth = sim.TruthStage.from_dict(tdata)
            base = sim.NoiseSpec(**{**noise_kw, "tracker_bias_mm": tuple(noise_kw["tracker_bias_mm"])})
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"invalid truth file {args.truth}: {exc}", EXIT_USAGE) from exc

        def one(seed):
            noise = dataclasses.replace(base, seed=seed)
            est = sim.simulate_tracker(truth, configs, ref, noise)
            r = _evaluate_once(theta, configs, ref, np.array([e.z_c_star for e in est]),
                               np.array([e.axis_star for e in est]))
            return seed, r

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            runs = sorted(pool.map(one, range(args.seed, args.seed + args.seeds)), key=lambda t: t[0])
        reports = [r for _, r in runs]
        result["monte_carlo"] = {
            "seeds": [args.seed, args.seed + args.seeds - 1],
            "mean_abs": float(np.mean([r.mean_abs for r in reports])),
            "median_abs": float(np.mean([r.median_abs for r in reports])),
            "mean_relative": float(np.mean([r.mean_relative for r in reports])),
            "mean_axis": np.mean([r.mean_axis for r in reports], axis=0).tolist(),
            "mean_rel_angle_deg": float(np.mean([r.mean_rel_angle_deg for r in reports])),
        }

    out = Path(args.out)
    _write_outputs(out, {"report.json": _dump(result)})
    try:
        csvs = write_scatter_csvs(report, out)
    except OSError as exc:
        raise CliError(f"cannot write scatter files: {exc}", EXIT_IO) from exc
    inputs = [Path(args.theta), Path(args.estimates)] + ([Path(args.truth)] if args.truth else [])
    _write_outputs(out, {"manifest.json": _manifest(
        "evaluate", inputs, [out / "report.json"] + csvs, seed=args.seed if args.seeds else None,
        theta_checksum=result["theta_checksum"],
    )})
    if args.format == "json":
        print(json.dumps({k: result[k] for k in ("n", "mean_abs", "median_abs", "mean_axis",
                                                  "mean_relative", "mean_rel_angle_deg")}, indent=1))
    return EXIT_OK


def cmd_consistency(args) -> int:
    theta = _load_theta(args.theta)
    try:
        ds = load_dataset(args.dataset)
    except DatasetError as exc:
        code = EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_USAGE
        raise CliError(str(exc), code) from exc
    if ds.unit == "voxel":
        ds = to_millimeters(ds)
    try:
        report = consistency_report(theta, ds, threshold_mm=args.threshold)
    except DegenerateInputError as exc:
        raise CliError(f"consistency check failed: {exc}", EXIT_DEGENERATE) from exc
    result = report.to_dict()
    if args.out:
        _write_outputs(Path(args.out), {"consistency.json": _dump(result)})
    if args.format == "csv":
        print("metric,value")
        print(f"corner_reprojection_mean_mm,{result['corner_reprojection_mean_mm']!r}")
        for name, v in zip(("lin1_lin2", "lin2_gon", "gon_rot"), result["inter_axis_angles_deg"]):
            print(f"angle_{name}_deg,{v!r}")
        print(f"fit_refit_mean_mm,{result['fit_refit_mean_mm']!r}")
    else:
        print(json.dumps(result, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagekin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a stage, an acquisition dataset and tracker estimates")
    p.add_argument("--spec", help="simulation spec (JSON); defaults to the measured-angle preset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the spec)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="train the kinematic model from a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="output directory for theta.json and the log")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="ground truth z_c, z_e and axis in the checkerboard frame")
    p.add_argument("theta")
    p.add_argument("--P", type=_stage_values, default=StageConfig(), help="P1,P2,P3,P4 (mm, mm, deg, deg)")
    p.add_argument("--ref-P", dest="ref_P", type=_stage_values, default=StageConfig(),
                   help="referencing pose P1,P2,P3,P4")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score tracker estimates against the model ground truth")
    p.add_argument("theta")
    p.add_argument("estimates")
    p.add_argument("--configs", help="JSON list of P vectors; must match the estimates")
    p.add_argument("--ref-P", dest="ref_P", type=_stage_values, default=None,
                   help="override the referencing pose stored with the estimates")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="simulator truth file for --seeds")
    p.add_argument("--seeds", type=int, default=0, help="Monte-Carlo repetitions with fresh tracker noise")
    p.add_argument("--seed", type=int, default=0, help="first Monte-Carlo seed")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("consistency", help="corner reprojection, inter-axis angles and fit-refit")
    p.add_argument("theta")
    p.add_argument("dataset")
    p.add_argument("--out", help="also write consistency.json here")
    p.add_argument("--threshold", type=float, default=0.1, help="reprojection flag threshold (mm)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_consistency)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"stagekin {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
