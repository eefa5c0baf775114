"""Testing-stage kinematic model: calibration and forward kinematics.

The stage is a serial stack, bottom to top: linear stage 1, linear stage 2,
goniometer, rotation stage, and on top the eye holder with the checkerboard.
Each stage owns a frame whose x-axis is its translation or rotation axis.
Posing the stack applies, stage by stage from the bottom, the stage's local
transform (translation along / rotation about local x) to every frame above
it and to every point carried by the holder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .dataio import NEUTRAL, Dataset, ScanRecord, ScanType, StageConfig, dataset_checksum
from .fitting import SphereFit, fit_circle_3pt, fit_sphere_lsq
from .geom import (
    DegenerateInputError,
    change_basis_then_transform,
    check_cs,
    complete_right_handed_basis,
    cs_axes,
    cs_from_axes,
    cs_origin,
    cs_x_axis,
    express_in,
    make_transform,
    median_points,
    normalize,
    rotation_about_line,
)

log = logging.getLogger(__name__)

STAGES = ("lin1", "lin2", "gon", "rot")
LINEAR_STAGES = ("lin1", "lin2")
STAGE_LABELS = {
    "lin1": "linear stage 1 (P1)",
    "lin2": "linear stage 2 (P2)",
    "gon": "goniometer (P3)",
    "rot": "rotation stage (P4)",
}


class MissingScanGroupError(DegenerateInputError):
    """The dataset lacks a scan group the calibration needs."""


def stage_transform(axis: str, value: float) -> np.ndarray:
    """Local stage transform: translation along x (mm) or rotation about x (deg)."""
    if axis not in STAGES:
        raise ValueError(f"unknown stage {axis!r}; expected one of {STAGES}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError("stage value must be finite")
    if axis in LINEAR_STAGES:
        return make_transform(translation=[value, 0.0, 0.0])
    a = np.radians(value)
    c, s = np.cos(a), np.sin(a)
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c, -s, 0.0],
            [0.0, s, c, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


@dataclass(frozen=True)
class Theta:
    """Calibrated model parameters, all frames expressed in the volume frame."""

    cs_lin1: np.ndarray
    cs_lin2: np.ndarray
    cs_gon: np.ndarray
    cs_rot: np.ndarray
    cornea: SphereFit
    eyeball: SphereFit
    neutral_corners: np.ndarray  # (4, 3), row k-1 = median of c^k over type-1 scans
    referencing_config: StageConfig | None = None
    dataset_checksum: str | None = None
    axis_flips: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("cs_lin1", "cs_lin2", "cs_gon", "cs_rot"):
            cs = np.asarray(getattr(self, name), dtype=float)
            check_cs(cs)
            object.__setattr__(self, name, cs)
        object.__setattr__(self, "neutral_corners", np.asarray(self.neutral_corners, dtype=float))
        if not self.cornea.radius < self.eyeball.radius:
            raise ValueError("cornea sphere must be smaller than the eyeball sphere")
        if not np.linalg.norm(self.cornea.center - self.eyeball.center) > 0:
            raise ValueError("cornea and eyeball centres coincide; geometrical axis undefined")

    @property
    def frames(self) -> dict[str, np.ndarray]:
        return {"lin1": self.cs_lin1, "lin2": self.cs_lin2, "gon": self.cs_gon, "rot": self.cs_rot}

    @property
    def z_c_hat(self) -> np.ndarray:
        return self.cornea.center

    @property
    def z_e_hat(self) -> np.ndarray:
        return self.eyeball.center

    def stage_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Neutral origins and x-axes of the four stages, each (4, 3)."""
        frames = [self.frames[s] for s in STAGES]
        return (
            np.array([cs_origin(f) for f in frames]),
            np.array([cs_x_axis(f) for f in frames]),
        )

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        def sphere(f: SphereFit):
            return {"center": f.center.tolist(), "radius": f.radius, "rms_residual": f.rms_residual}

        return {
            "frames": {s: self.frames[s].T.tolist() for s in STAGES},
            "cornea": sphere(self.cornea),
            "eyeball": sphere(self.eyeball),
            "neutral_corners": {f"c{k + 1}": self.neutral_corners[k].tolist() for k in range(4)},
            "referencing_P": None
            if self.referencing_config is None
            else list(self.referencing_config.as_tuple()),
            "dataset_checksum": self.dataset_checksum,
            "axis_flips": list(self.axis_flips),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Theta":
        def sphere(d):
            return SphereFit(np.asarray(d["center"], dtype=float), float(d["radius"]),
                             float(d.get("rms_residual", 0.0)))

        frames = {s: np.asarray(data["frames"][s], dtype=float).T for s in STAGES}
        ref = data.get("referencing_P")
        return cls(
            cs_lin1=frames["lin1"],
            cs_lin2=frames["lin2"],
            cs_gon=frames["gon"],
            cs_rot=frames["rot"],
            cornea=sphere(data["cornea"]),
            eyeball=sphere(data["eyeball"]),
            neutral_corners=np.array([data["neutral_corners"][f"c{k}"] for k in range(1, 5)]),
            referencing_config=None if ref is None else StageConfig.from_seq(ref),
            dataset_checksum=data.get("dataset_checksum"),
            axis_flips=tuple(data.get("axis_flips", ())),
        )


def save_theta(theta: Theta, path) -> None:
    Path(path).write_text(json.dumps(theta.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_theta(path) -> Theta:
    return Theta.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------


def _training_scans(ds: Dataset, stage: int, scan_type: ScanType) -> tuple[ScanRecord, list[ScanRecord]]:
    """The neutral reference scan and the moved scans training one stage.

    Moved scans are the scans of ``scan_type`` in which only ``stage`` is
    away from neutral. The reference is the neutral scan of the same type
    closest before the first moved scan (scan 1 for scan 2, scan 7 for
    scans 8 and 10 in the standard plan).
    """
    name = STAGES[stage]
    typed = ds.scans_of_type(scan_type)
    moved = [s for s in typed if s.stage_settings.moved_axes() == (stage,)]
    if not moved:
        raise MissingScanGroupError(
            f"missing scan group: no type-{int(scan_type)} scan moving {STAGE_LABELS[name]}"
        )
    neutral = [s for s in typed if s.stage_settings.is_neutral]
    if not neutral:
        raise MissingScanGroupError(
            f"missing scan group: no neutral type-{int(scan_type)} reference scan "
            f"for {STAGE_LABELS[name]}"
        )
    before = [s for s in neutral if s.id < moved[0].id]
    ref = before[-1] if before else neutral[0]
    return ref, moved


def _linear_axis(ds: Dataset, stage: int) -> tuple[np.ndarray, list[int]]:
    ref, moved = _training_scans(ds, stage, ScanType.T3)
    diffs = []
    for s in moved:
        # reference minus moved scan when the moved setting is negative,
        # so the axis points toward increasing P
        sign = np.sign(s.stage_settings.as_tuple()[stage])
        diffs.extend(sign * (s.corners - ref.corners))
    direction = median_points(diffs)
    return normalize(direction), [ref.id] + [s.id for s in moved]


def _rotary_axis(ds: Dataset, stage: int) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    ref, moved = _training_scans(ds, stage, ScanType.T4)
    name = STAGES[stage]
    if len(moved) < 2:
        raise MissingScanGroupError(
            f"missing scan group: {STAGE_LABELS[name]} needs two moved type-4 scans, "
            f"found {len(moved)}"
        )
    a, b, c = ref, moved[0], moved[1]
    ids = (a.id, b.id, c.id)
    centers, normals = [], []
    for k in range(4):
        p1, p2, p3 = a.corners[k], b.corners[k], c.corners[k]
        try:
            centers.append(fit_circle_3pt(p1, p2, p3).center)
        except DegenerateInputError as exc:
            raise DegenerateInputError(
                f"{STAGE_LABELS[name]} circle fit on scans {ids[0]}/{ids[1]}/{ids[2]} "
                f"(corner c{k + 1}): {exc}"
            ) from exc
        normals.append(np.cross(p1 - p2, p1 - p3))
    origin = median_points(centers)
    try:
        axis = normalize(median_points(normals))
    except DegenerateInputError as exc:
        raise DegenerateInputError(
            f"{STAGE_LABELS[name]} axis undefined on scans {ids[0]}/{ids[1]}/{ids[2]}: {exc}"
        ) from exc
    return origin, axis, ids


def _axis_sign(ds: Dataset, stage: int, origin, axis, ref_corners) -> int:
    """+1 if positive dial angles rotate right-handed about ``axis``, else -1.

    Judged on the single-DOF test scans of this stage (type 5), falling back
    to the moved training scans when no test scan exists.
    """
    tests = [s for s in ds.scans_of_type(ScanType.T5) if s.stage_settings.moved_axes() == (stage,)]
    if not tests:
        _, tests = _training_scans(ds, stage, ScanType.T4)
    err = {+1: 0.0, -1: 0.0}
    for s in tests:
        angle = np.radians(s.stage_settings.as_tuple()[stage])
        for sign in err:
            M = rotation_about_line(origin, sign * axis, angle)
            pred = ref_corners @ M[:3, :3].T + M[:3, 3]
            err[sign] += float(np.linalg.norm(pred - s.corners, axis=1).sum())
    return +1 if err[+1] <= err[-1] else -1


def calibrate(ds: Dataset) -> Theta:
    """Train the kinematic model from a millimetre dataset."""
    if ds.unit != "mm":
        raise ValueError("calibrate needs a dataset in millimetres; convert with to_millimeters")
    neutral_scans = ds.scans_of_type(ScanType.T1)
    if len(neutral_scans) < 3:
        raise MissingScanGroupError(
            f"missing scan group: need at least 3 type-1 scans, found {len(neutral_scans)}"
        )
    neutral_corners = np.array([median_points([s.corners[k] for s in neutral_scans]) for k in range(4)])
    lin_origin = neutral_corners[0]

    frames = {}
    for stage in (0, 1):
        axis, ids = _linear_axis(ds, stage)
        frames[STAGES[stage]] = complete_right_handed_basis(lin_origin, axis)
        log.debug("%s axis %s from scans %s", STAGES[stage], axis, ids)

    flips = []
    for stage in (2, 3):
        origin, axis, ids = _rotary_axis(ds, stage)
        sign = _axis_sign(ds, stage, origin, axis, ds.scan(ids[0]).corners)
        if sign < 0:
            axis = -axis
            flips.append(STAGES[stage])
            log.info(
                "%s: normal from scans %s points against the dial direction; axis flipped",
                STAGE_LABELS[STAGES[stage]], ids,
            )
        frames[STAGES[stage]] = complete_right_handed_basis(origin, axis)

    surface = [s for s in neutral_scans if s.cornea_points is not None]
    if not surface:
        raise MissingScanGroupError("missing scan group: no type-1 scan carries surface samples")
    first = surface[0]
    try:
        cornea = fit_sphere_lsq(first.cornea_points)
        eyeball = fit_sphere_lsq(first.eyeball_points)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"sphere fit on scan {first.id}: {exc}") from exc

    return Theta(
        cs_lin1=frames["lin1"],
        cs_lin2=frames["lin2"],
        cs_gon=frames["gon"],
        cs_rot=frames["rot"],
        cornea=cornea,
        eyeball=eyeball,
        neutral_corners=neutral_corners,
        dataset_checksum=dataset_checksum(ds),
        axis_flips=tuple(flips),
    )


# --------------------------------------------------------------------------
# forward kinematics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PosedStage:
    z_c: np.ndarray
    z_e: np.ndarray
    frames: dict
    points: np.ndarray | None = None


def forward_kinematics(theta: Theta, cfg: StageConfig, points=None) -> PosedStage:
    """Pose the stack for ``cfg`` one stage at a time, bottom first.

    ``points`` are optional extra holder-fixed points (e.g. checkerboard
    corners) given in the volume frame at neutral pose.
    """
    frames = {s: theta.frames[s].copy() for s in STAGES}
    carried = [theta.z_c_hat, theta.z_e_hat]
    extra = None if points is None else np.asarray(points, dtype=float).reshape(-1, 3)
    pts = np.vstack([np.asarray(carried)] + ([extra] if extra is not None else []))
    for i, stage in enumerate(STAGES):
        value = cfg.as_tuple()[i]
        if value == 0.0:
            continue
        T_a = stage_transform(stage, value)
        cs_a = frames[stage]
        for above in STAGES[i + 1:]:
            frames[above] = change_basis_then_transform(cs_a, T_a, frames[above])
        pts = change_basis_then_transform(cs_a, T_a, pts)
    return PosedStage(
        z_c=pts[0],
        z_e=pts[1],
        frames=frames,
        points=None if extra is None else pts[2:],
    )


def pose_points_batch(theta: Theta, configs: Sequence[StageConfig] | np.ndarray, points) -> np.ndarray:
    """Pose holder-fixed ``points`` (m, 3) for many configs; returns (n, m, 3).

    Uses the compiled kernel when available.
    """
    origins, axes = theta.stage_axes()
    cfg = _config_array(configs)
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    return _kernels.pose_points(origins, axes, cfg, pts)


def _config_array(configs) -> np.ndarray:
    if isinstance(configs, np.ndarray):
        arr = np.asarray(configs, dtype=float).reshape(-1, 4)
    else:
        arr = np.array([c.as_tuple() for c in configs], dtype=float).reshape(-1, 4)
    return np.ascontiguousarray(arr)


# --------------------------------------------------------------------------
# checkerboard frame and ground truth
# --------------------------------------------------------------------------


def neutral_cs_cb(theta: Theta) -> np.ndarray:
    """Checkerboard frame at neutral pose: origin c4, x toward c1, y toward c3."""
    c1, _, c3, c4 = theta.neutral_corners
    try:
        x = normalize(c1 - c4)
        y_raw = (c3 - c4) - np.dot(c3 - c4, x) * x
        y = normalize(y_raw)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"checkerboard corners are degenerate: {exc}") from exc
    return cs_from_axes(c4, x, y, np.cross(x, y))


def build_cs_cb(theta: Theta, referencing_cfg: StageConfig = NEUTRAL) -> np.ndarray:
    cs = neutral_cs_cb(theta)
    posed = forward_kinematics(theta, referencing_cfg, points=cs[:3].T).points
    out = np.ones((4, 4))
    out[:3] = posed.T
    return out


@dataclass(frozen=True)
class GroundTruth:
    z_c: np.ndarray
    z_e: np.ndarray
    geometrical_axis: np.ndarray


def _truth_from(z_c, z_e) -> GroundTruth:
    return GroundTruth(z_c, z_e, normalize(z_c - z_e))


def ground_truth_in_cb(
    theta: Theta, measurement_cfg: StageConfig, referencing_cfg: StageConfig = NEUTRAL
) -> GroundTruth:
    posed = forward_kinematics(theta, measurement_cfg)
    cs_cb = build_cs_cb(theta, referencing_cfg)
    z = express_in(cs_cb, np.vstack([posed.z_c, posed.z_e]))
    return _truth_from(z[0], z[1])


def ground_truth_batch(
    theta: Theta, configs: Iterable[StageConfig], referencing_cfg: StageConfig = NEUTRAL
) -> list[GroundTruth]:
    """Ground truth for many configs through the batched posing kernel."""
    configs = list(configs)
    posed = pose_points_batch(theta, configs, np.vstack([theta.z_c_hat, theta.z_e_hat]))
    cs_cb = build_cs_cb(theta, referencing_cfg)
    out = []
    for pair in posed:
        z = express_in(cs_cb, pair)
        out.append(_truth_from(z[0], z[1]))
    return out


def stage_axes_posed(theta: Theta, cfg: StageConfig) -> np.ndarray:
    """Unit x-axes of the four stage frames after posing, rows in stack order."""
    frames = forward_kinematics(theta, cfg).frames
    return np.array([cs_axes(frames[s])[:, 0] for s in STAGES])
