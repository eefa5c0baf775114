"""Accuracy, precision and orientation metrics, plus model consistency checks.

Accuracy statistics use Euclidean error norms, while per-axis statistics
are signed component means and medians so a systematic offset keeps its
sign. The relative error removes the mean error vector before taking norms.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import Dataset, ScanType, StageConfig
from .fitting import fit_sphere_lsq
from .geom import (
    DegenerateInputError,
    angle_between_deg,
    apply_transform,
    cs_x_axis,
    estimate_rigid_transform,
    median_points,
)
from .model import STAGES, Theta, forward_kinematics

#: Mean corner-reprojection error above which a calibration is flagged (mm).
REPROJECTION_THRESHOLD_MM = 0.1


def dof_label(cfg: StageConfig | None) -> str:
    if cfg is None:
        return ""
    moved = cfg.moved_axes()
    if not moved:
        return "neutral"
    return "+".join(f"P{i + 1}" for i in moved)


@dataclass
class AccuracyReport:
    n: int
    mean_abs: float
    median_abs: float
    mean_axis: np.ndarray
    median_axis: np.ndarray
    mean_relative: float
    mean_rel_angle_deg: float | None = None
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_abs": self.mean_abs,
            "median_abs": self.median_abs,
            "mean_axis": self.mean_axis.tolist(),
            "median_axis": self.median_axis.tolist(),
            "mean_relative": self.mean_relative,
            "mean_rel_angle_deg": self.mean_rel_angle_deg,
            "rows": [
                {
                    "id": r["id"],
                    "dof": r["dof"],
                    "P": None if r["config"] is None else list(r["config"].as_tuple()),
                    "truth": r["truth"].tolist(),
                    "estimate": r["estimate"].tolist(),
                    "error": r["error"].tolist(),
                }
                for r in self.rows
            ],
        }

    def scatter(self, plane: str) -> list[dict]:
        """Rows for one projection plane, ``"xy"`` or ``"xz"``."""
        a, b = {"xy": (0, 1), "xz": (0, 2)}[plane]
        return [
            {
                "id": r["id"],
                "dof": r["dof"],
                "truth_a": r["truth"][a],
                "truth_b": r["truth"][b],
                "est_a": r["estimate"][a],
                "est_b": r["estimate"][b],
            }
            for r in self.rows
        ]


def evaluate_accuracy(estimates, truths, configs: Sequence[StageConfig] | None = None) -> AccuracyReport:
    est = np.asarray(estimates, dtype=float).reshape(-1, 3)
    tru = np.asarray(truths, dtype=float).reshape(-1, 3)
    if len(est) != len(tru):
        raise ValueError(f"{len(est)} estimates but {len(tru)} ground-truth points")
    if len(est) == 0:
        raise ValueError("nothing to evaluate")
    if configs is not None and len(configs) != len(est):
        raise ValueError("configs must match the number of estimates")
    err = est - tru
    norms = np.linalg.norm(err, axis=1)
    mean_err = err.mean(axis=0)
    rel = np.linalg.norm(err - mean_err, axis=1)
    rows = [
        {
            "id": i + 1,
            "config": None if configs is None else configs[i],
            "dof": dof_label(None if configs is None else configs[i]),
            "truth": tru[i],
            "estimate": est[i],
            "error": err[i],
        }
        for i in range(len(est))
    ]
    return AccuracyReport(
        n=len(est),
        mean_abs=float(norms.mean()),
        median_abs=float(np.median(norms)),
        mean_axis=mean_err,
        median_axis=np.median(err, axis=0),
        mean_relative=float(rel.mean()),
        rows=rows,
    )


def evaluate_orientation(est_axes, truth_axes) -> float:
    """Mean |angle(est_i, est_i+1) - angle(truth_i, truth_i+1)| in degrees.

    Measurements are compared in the given order; only angles between
    consecutive axes enter, so a common rotation of either sequence has no
    effect.
    """
    est = np.asarray(est_axes, dtype=float).reshape(-1, 3)
    tru = np.asarray(truth_axes, dtype=float).reshape(-1, 3)
    if len(est) != len(tru):
        raise ValueError(f"{len(est)} estimated axes but {len(tru)} true axes")
    if len(est) < 2:
        raise ValueError("orientation error needs at least two measurements")
    diffs = [
        abs(angle_between_deg(est[i], est[i + 1]) - angle_between_deg(tru[i], tru[i + 1]))
        for i in range(len(est) - 1)
    ]
    return float(np.mean(diffs))


# --------------------------------------------------------------------------
# model consistency
# --------------------------------------------------------------------------


def corner_reprojection_errors(theta: Theta, ds: Dataset) -> np.ndarray:
    """Per-point deviations (n_test * 4,) of predicted vs measured test corners.

    Medians of the neutral test scans (type 2) are posed to each single-DOF
    test scan (type 5) and compared with its measured corners.
    """
    neutral = ds.scans_of_type(ScanType.T2)
    tests = ds.scans_of_type(ScanType.T5)
    if not neutral:
        raise DegenerateInputError("corner reprojection needs type-2 scans")
    if not tests:
        raise DegenerateInputError("corner reprojection needs type-5 scans")
    base = np.array([median_points([s.corners[k] for s in neutral]) for k in range(4)])
    out = []
    for s in tests:
        pred = forward_kinematics(theta, s.stage_settings, points=base).points
        out.append(np.linalg.norm(pred - s.corners, axis=1))
    return np.concatenate(out)


def consistency_corner_reprojection(theta: Theta, ds: Dataset) -> float:
    return float(corner_reprojection_errors(theta, ds).mean())


def consistency_axis_angles(theta: Theta) -> tuple[float, float, float]:
    """Angles (deg) between consecutive stage axes: lin1-lin2, lin2-gon, gon-rot."""
    axes = [cs_x_axis(theta.frames[s]) for s in STAGES]
    return tuple(angle_between_deg(axes[i], axes[i + 1]) for i in range(3))


def _unpose(theta: Theta, cfg: StageConfig, points: np.ndarray) -> np.ndarray:
    if cfg.is_neutral:
        return points
    probe = np.vstack([np.zeros(3), np.eye(3)]) + theta.z_c_hat
    moved = forward_kinematics(theta, cfg, points=probe).points
    back = estimate_rigid_transform(moved, probe)
    return apply_transform(back, points)


def consistency_fit_refit(ds: Dataset, theta: Theta | None = None, method: str = "pairwise") -> float:
    """Spread of cornea sphere centres refitted on every scan with cornea samples.

    ``method="pairwise"`` averages all pairwise centre distances;
    ``"centroid"`` averages the distances to the mean centre. Scans not at
    neutral are mapped back to neutral through ``theta``.
    """
    if method not in ("pairwise", "centroid"):
        raise ValueError(f"unknown method {method!r}")
    scans = [s for s in ds.scans if s.cornea_points is not None]
    if len(scans) < 2:
        raise DegenerateInputError(f"fit-refit needs at least 2 scans with cornea samples, found {len(scans)}")
    centers = []
    for s in scans:
        c = fit_sphere_lsq(s.cornea_points).center
        if not s.stage_settings.is_neutral:
            if theta is None:
                raise ValueError(f"scan {s.id} is not neutral; a calibrated model is needed to unpose it")
            c = _unpose(theta, s.stage_settings, c[None, :])[0]
        centers.append(c)
    centers = np.asarray(centers)
    if method == "centroid":
        return float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).mean())
    return float(np.mean([np.linalg.norm(a - b) for a, b in itertools.combinations(centers, 2)]))


@dataclass
class ConsistencyReport:
    corner_reprojection_mean_mm: float
    inter_axis_angles_deg: tuple
    fit_refit_mean_mm: float
    reprojection_threshold_mm: float = REPROJECTION_THRESHOLD_MM

    @property
    def flagged(self) -> bool:
        return self.corner_reprojection_mean_mm > self.reprojection_threshold_mm

    def to_dict(self) -> dict:
        return {
            "corner_reprojection_mean_mm": self.corner_reprojection_mean_mm,
            "inter_axis_angles_deg": list(self.inter_axis_angles_deg),
            "fit_refit_mean_mm": self.fit_refit_mean_mm,
            "reprojection_threshold_mm": self.reprojection_threshold_mm,
            "flagged": self.flagged,
        }


def consistency_report(
    theta: Theta, ds: Dataset, threshold_mm: float = REPROJECTION_THRESHOLD_MM
) -> ConsistencyReport:
    return ConsistencyReport(
        corner_reprojection_mean_mm=consistency_corner_reprojection(theta, ds),
        inter_axis_angles_deg=consistency_axis_angles(theta),
        fit_refit_mean_mm=consistency_fit_refit(ds, theta),
        reprojection_threshold_mm=threshold_mm,
    )


def write_scatter_csvs(report: AccuracyReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for plane in ("xy", "xz"):
        path = out_dir / f"scatter_{plane}.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["id", "dof", "truth_a", "truth_b", "est_a", "est_b"])
            writer.writeheader()
            for row in report.scatter(plane):
                writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                                 for k, v in row.items()})
        paths.append(path)
    return paths
