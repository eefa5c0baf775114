"""Synthetic testing stage, acquisition-plan datasets and tracker estimates.

The simulated stage composes stage motions directly as world-frame matrix
products, ``T_lin1(P1) T_lin2(P2) R_gon(P3) R_rot(P4)``, each factor built
from the neutral-pose axis. This is deliberately a different code path
from the model's stage-by-stage basis changes, so agreement between the
two is meaningful. This module must not import ``stagekin.model``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import NEUTRAL, Dataset, ScanRecord, ScanType, StageConfig, to_voxels
from .geom import (
    angle_between_deg,
    apply_transform,
    as_point,
    normalize,
    random_rotation,
    rotation_about_line,
    translation,
)

ORTHOGONAL_ANGLES = (90.0, 90.0, 90.0)
#: Inter-axis angles lin1-lin2, lin2-gon, gon-rot observed on the real stage.
MEASURED_ANGLES = (89.5, 90.9, 90.2)

#: Centre of a 2100 x 1900 x 1700 voxel volume at 25 um, in mm.
VOLUME_CENTER_MM = (26.25, 23.75, 21.25)

#: (scan id, (P1, P2, P3, P4), type tags) of the 15-scan acquisition plan.
STANDARD_PLAN = (
    (1, (0.0, 0.0, 0.0, 0.0), (1, 3)),
    (2, (-7.5, 0.0, 0.0, 0.0), (3,)),
    (3, (7.5, 0.0, 0.0, 0.0), (5,)),
    (4, (0.0, 0.0, 0.0, 0.0), (1, 3)),
    (5, (0.0, -7.5, 0.0, 0.0), (3,)),
    (6, (0.0, 7.5, 0.0, 0.0), (5,)),
    (7, (0.0, 0.0, 0.0, 0.0), (1, 4)),
    (8, (0.0, 0.0, -15.0, 0.0), (4,)),
    (9, (0.0, 0.0, 8.0, 0.0), (5,)),
    (10, (0.0, 0.0, 15.0, 0.0), (4,)),
    (11, (0.0, 0.0, 0.0, 0.0), (2, 4)),
    (12, (0.0, 0.0, 0.0, -30.0), (4,)),
    (13, (0.0, 0.0, 0.0, 15.0), (5,)),
    (14, (0.0, 0.0, 0.0, 30.0), (4,)),
    (15, (0.0, 0.0, 0.0, 0.0), (2,)),
)

#: Stage pose at which the tracker was referenced to the checkerboard.
REFERENCING_POSE = StageConfig(8.0, 7.0, 8.0, 56.0)


def _eval_configs() -> tuple[StageConfig, ...]:
    out = [StageConfig(P1=v) for v in (7.5, 10.0, 12.5, 15.0, 17.5)]
    out += [StageConfig(P2=v) for v in (7.5, 10.0, 12.5, 15.0, 17.5)]
    out += [StageConfig(P3=v) for v in (-10.0, -5.0, 0.0, 5.0, 10.0)]
    out += [StageConfig(P4=v) for v in (290.0, 298.0, 307.0, 316.0, 324.0)]
    return tuple(out)


#: The 20 single-DOF tracker evaluation poses.
EVAL_CONFIGS = _eval_configs()
DOF_LABELS = ("P1", "P2", "P3", "P4")

#: Per-axis mean tracker error reported for the evaluated tracker (mm).
TRACKER_BIAS_MM = (0.32, -0.09, -0.54)
# Tracker noise tuned offline by brute-force Monte Carlo (tests/oracles.py)
# so that, with TRACKER_BIAS_MM, E|error| = 0.68 mm and the mean
# bias-removed error is 0.32 mm over the 20 evaluation poses.
TRACKER_SIGMA_ALONG_BIAS_MM = 0.295
TRACKER_SIGMA_MM = 0.1525
# Axis noise tuned the same way for a mean relative angle error of 0.50 deg.
AXIS_NOISE_DEG = 0.3525


@dataclass(frozen=True)
class NoiseSpec:
    corner_sigma_mm: float = 0.0
    surface_sigma_mm: float = 0.0
    tracker_sigma_mm: float = 0.0
    tracker_bias_mm: tuple = (0.0, 0.0, 0.0)
    axis_noise_deg: float = 0.0
    seed: int = 0
    # None keeps tracker noise isotropic; otherwise the standard deviation
    # along the bias direction, tracker_sigma_mm applying across it
    tracker_sigma_along_bias_mm: float | None = None

    def __post_init__(self):
        for name in ("corner_sigma_mm", "surface_sigma_mm", "tracker_sigma_mm", "axis_noise_deg"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if self.tracker_sigma_along_bias_mm is not None:
            if not self.tracker_sigma_along_bias_mm >= 0:
                raise ValueError("tracker_sigma_along_bias_mm must be non-negative")
            if not np.linalg.norm(self.tracker_bias_mm) > 0:
                raise ValueError("anisotropic tracker noise needs a non-zero bias direction")
        object.__setattr__(self, "tracker_bias_mm", tuple(float(v) for v in as_point(self.tracker_bias_mm)))

    @classmethod
    def tuned_tracker(cls, seed: int = 0, **kw) -> "NoiseSpec":
        """Tracker error model reproducing the reported accuracy statistics."""
        params = dict(
            tracker_bias_mm=TRACKER_BIAS_MM,
            tracker_sigma_mm=TRACKER_SIGMA_MM,
            tracker_sigma_along_bias_mm=TRACKER_SIGMA_ALONG_BIAS_MM,
            axis_noise_deg=AXIS_NOISE_DEG,
            seed=seed,
        )
        params.update(kw)
        return cls(**params)


@dataclass(frozen=True)
class TruthStage:
    lin1_axis: np.ndarray
    lin2_axis: np.ndarray
    gon_point: np.ndarray
    gon_axis: np.ndarray
    rot_point: np.ndarray
    rot_axis: np.ndarray
    corners: np.ndarray  # (4, 3) neutral checkerboard corners c1..c4
    cornea_center: np.ndarray
    cornea_radius: float
    eyeball_center: np.ndarray
    eyeball_radius: float
    angles_deg: tuple = ORTHOGONAL_ANGLES
    cornea_samples: int = 60
    eyeball_samples: int = 200
    cornea_cap_deg: float = 60.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lin1_axis", "lin2_axis", "gon_axis", "rot_axis"):
            v = np.asarray(getattr(self, name), dtype=float)
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
            object.__setattr__(self, name, v)
        for name in ("gon_point", "rot_point", "cornea_center", "eyeball_center"):
            object.__setattr__(self, name, as_point(getattr(self, name)))
        corners = np.asarray(self.corners, dtype=float)
        n = np.cross(corners[0] - corners[3], corners[2] - corners[3])
        if abs(np.dot(normalize(n), corners[1] - corners[3])) > 1e-9:
            raise ValueError("checkerboard corners must be coplanar")
        object.__setattr__(self, "corners", corners)
        if not (self.cornea_radius > 0 and self.eyeball_radius > 0):
            raise ValueError("sphere radii must be positive")

    # -- direct composition (the oracle path) ---------------------------

    def motion(self, cfg: StageConfig) -> np.ndarray:
        """World-frame 4x4 motion of the holder for ``cfg``."""
        P1, P2, P3, P4 = cfg.as_tuple()
        return (
            translation(P1 * self.lin1_axis)
            @ translation(P2 * self.lin2_axis)
            @ rotation_about_line(self.gon_point, self.gon_axis, math.radians(P3))
            @ rotation_about_line(self.rot_point, self.rot_axis, math.radians(P4))
        )

    def pose(self, cfg: StageConfig, points) -> np.ndarray:
        return apply_transform(self.motion(cfg), points)

    def cs_cb_rt(self, referencing_cfg: StageConfig = NEUTRAL) -> tuple[np.ndarray, np.ndarray]:
        """Checkerboard frame at ``referencing_cfg`` as (axes as columns, origin)."""
        c1, _, c3, c4 = self.pose(referencing_cfg, self.corners)
        x = normalize(c1 - c4)
        y = normalize((c3 - c4) - np.dot(c3 - c4, x) * x)
        return np.column_stack([x, y, np.cross(x, y)]), c4

    def ground_truth(self, cfg: StageConfig, referencing_cfg: StageConfig = NEUTRAL):
        """True (z_c, z_e, geometrical axis), expressed in the checkerboard frame."""
        R, o = self.cs_cb_rt(referencing_cfg)
        z = self.pose(cfg, np.vstack([self.cornea_center, self.eyeball_center]))
        local = (z - o) @ R
        return local[0], local[1], normalize(local[0] - local[1])

    def inter_axis_angles(self) -> tuple[float, float, float]:
        return (
            angle_between_deg(self.lin1_axis, self.lin2_axis),
            angle_between_deg(self.lin2_axis, self.gon_axis),
            angle_between_deg(self.gon_axis, self.rot_axis),
        )

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TruthStage":
        kw = dict(data)
        kw["angles_deg"] = tuple(kw.get("angles_deg", ORTHOGONAL_ANGLES))
        return cls(**kw)


def synthesize_stage(
    angles_deg: Sequence[float] = ORTHOGONAL_ANGLES,
    seed: int = 0,
    cornea_samples: int = 60,
    eyeball_samples: int = 200,
    place_randomly: bool = True,
) -> TruthStage:
    """Build a synthetic stage with the given inter-axis angles.

    Local layout (mm): linear stage 1 along x, linear stage 2 near y, the
    goniometer axis near x through (0, 0, -20), the rotation axis near y
    through (0, 0, -12), and a 6 mm checkerboard quad in the z = 0 plane
    directly above both rotary axes. Keeping the corners radially above
    both rotary axes means the poorly conditioned tilt of each three-pose
    circle plane lies along z, orthogonal to the neighbouring axes, so it
    does not bias the measured inter-axis angles to first order.

    With ``place_randomly`` the whole stage is rigidly moved to a
    seed-dependent orientation near the centre of the scan volume.
    """
    a1, a2, a3 = (float(a) for a in angles_deg)
    for a in (a1, a2, a3):
        if not 80.0 < a < 100.0:
            raise ValueError(f"inter-axis angles must lie in (80, 100) degrees, got {a}")
    r1, r2, r3 = np.radians([a1, a2, a3])

    lin1 = np.array([1.0, 0.0, 0.0])
    lin2 = np.array([np.cos(r1), np.sin(r1), 0.0])
    u = np.array([np.sin(r1), -np.cos(r1), 0.0])
    gon = np.cos(r2) * lin2 + np.sin(r2) * u
    v = normalize(lin2 - np.dot(lin2, gon) * gon)
    rot = np.cos(r3) * gon + np.sin(r3) * v

    gon_point = np.array([0.0, 0.0, -20.0])
    rot_point = np.array([0.0, 0.0, -12.0])
    corners = np.array([[-3.0, -3.0, 0.0], [-3.0, 3.0, 0.0], [3.0, 3.0, 0.0], [3.0, -3.0, 0.0]])
    eye_axis = normalize([0.1, 0.2, 1.0])
    eyeball_center = np.array([0.0, 18.0, -4.0])
    cornea_center = eyeball_center + 5.6 * eye_axis

    if place_randomly:
        rng = np.random.default_rng(seed)
        Q = random_rotation(rng)
        t = np.asarray(VOLUME_CENTER_MM) + rng.uniform(-2.0, 2.0, size=3)
    else:
        Q, t = np.eye(3), np.zeros(3)

    def place(p):
        return np.asarray(p) @ Q.T + t

    def turn(d):
        d = Q @ d
        return d / np.linalg.norm(d)

    return TruthStage(
        lin1_axis=turn(lin1),
        lin2_axis=turn(lin2),
        gon_point=place(gon_point),
        gon_axis=turn(gon),
        rot_point=place(rot_point),
        rot_axis=turn(rot),
        corners=place(corners),
        cornea_center=place(cornea_center),
        cornea_radius=7.8,
        eyeball_center=place(eyeball_center),
        eyeball_radius=12.0,
        angles_deg=(a1, a2, a3),
        cornea_samples=cornea_samples,
        eyeball_samples=eyeball_samples,
        seed=seed,
    )


def _sphere_patch(rng, center, radius, axis, n, cos_lo, cos_hi) -> np.ndarray:
    """``n`` points uniform on the sphere where cos(angle to axis) is in [cos_lo, cos_hi]."""
    axis = normalize(axis)
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = normalize(np.cross(axis, helper))
    e2 = np.cross(axis, e1)
    ct = rng.uniform(cos_lo, cos_hi, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    st = np.sqrt(1.0 - ct**2)
    dirs = ct[:, None] * axis + (st * np.cos(phi))[:, None] * e1 + (st * np.sin(phi))[:, None] * e2
    return center + radius * dirs


def plan_rows(plan=STANDARD_PLAN) -> list[tuple[int, StageConfig, tuple]]:
    rows = []
    for sid, P, types in plan:
        rows.append((int(sid), StageConfig.from_seq(P), tuple(int(t) for t in types)))
    return rows


def generate_dataset(
    truth: TruthStage,
    plan=STANDARD_PLAN,
    noise: NoiseSpec = NoiseSpec(),
    unit: str = "mm",
    voxel_size_mm: float = 0.025,
) -> Dataset:
    """Acquisition-plan dataset measured on ``truth`` with Gaussian noise.

    The random stream is consumed identically whatever the noise levels, so
    runs with equal seeds differ only by the added noise.
    """
    rng = np.random.default_rng(noise.seed)
    eye_axis = normalize(truth.cornea_center - truth.eyeball_center)
    cap_cos = math.cos(math.radians(truth.cornea_cap_deg))
    scans = []
    for sid, cfg, types in plan_rows(plan):
        M = truth.motion(cfg)
        corners = apply_transform(M, truth.corners)
        corners = corners + rng.normal(0.0, 1.0, size=corners.shape) * noise.corner_sigma_mm
        surfaces = {}
        if set(types) & {1, 2}:
            cornea = _sphere_patch(rng, truth.cornea_center, truth.cornea_radius, eye_axis,
                                   truth.cornea_samples, cap_cos, 1.0)
            # posterior part of the globe; the front is hidden behind the cornea
            eyeball = _sphere_patch(rng, truth.eyeball_center, truth.eyeball_radius, eye_axis,
                                    truth.eyeball_samples, -1.0, math.cos(math.radians(50.0)))
            cornea = cornea + rng.normal(size=cornea.shape) * noise.surface_sigma_mm
            eyeball = eyeball + rng.normal(size=eyeball.shape) * noise.surface_sigma_mm
            surfaces = {
                "cornea_points": apply_transform(M, cornea),
                "eyeball_points": apply_transform(M, eyeball),
            }
        scans.append(ScanRecord(sid, cfg, frozenset(ScanType(t) for t in types), corners, **surfaces))
    ds = Dataset(unit="mm", scans=tuple(scans), voxel_size_mm=voxel_size_mm)
    if unit == "voxel":
        return to_voxels(ds)
    if unit != "mm":
        raise ValueError(f"unit must be 'mm' or 'voxel', got {unit!r}")
    return ds


@dataclass(frozen=True)
class TrackerEstimate:
    config: StageConfig
    z_c_star: np.ndarray
    axis_star: np.ndarray


def tracker_noise(rng: np.random.Generator, noise: NoiseSpec, n: int) -> np.ndarray:
    """(n, 3) bias + Gaussian tracker error draws."""
    g = rng.normal(size=(n, 3))
    bias = np.asarray(noise.tracker_bias_mm)
    if noise.tracker_sigma_along_bias_mm is None:
        return bias + noise.tracker_sigma_mm * g
    u = bias / np.linalg.norm(bias)
    along = (g @ u)[:, None] * u
    return bias + noise.tracker_sigma_mm * (g - along) + noise.tracker_sigma_along_bias_mm * along


def perturb_axes(rng: np.random.Generator, axes: np.ndarray, sigma_deg: float) -> np.ndarray:
    axes = np.asarray(axes, dtype=float)
    noisy = axes + np.radians(sigma_deg) * rng.normal(size=axes.shape)
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def simulate_tracker(
    truth: TruthStage,
    configs: Sequence[StageConfig],
    referencing_cfg: StageConfig = NEUTRAL,
    noise: NoiseSpec = NoiseSpec(),
) -> list[TrackerEstimate]:
    """Tracker estimates: true z_c in the checkerboard frame plus bias and noise."""
    configs = list(configs)
    if not configs:
        raise ValueError("simulate_tracker needs at least one configuration")
    rng = np.random.default_rng(noise.seed)
    truths = [truth.ground_truth(c, referencing_cfg) for c in configs]
    z_c = np.array([t[0] for t in truths])
    axes = np.array([t[2] for t in truths])
    z_star = z_c + tracker_noise(rng, noise, len(configs))
    axes_star = perturb_axes(rng, axes, noise.axis_noise_deg) if noise.axis_noise_deg > 0 else axes
    return [TrackerEstimate(c, z, a) for c, z, a in zip(configs, z_star, axes_star)]


def estimates_to_dict(estimates: Sequence[TrackerEstimate], referencing_cfg: StageConfig) -> dict:
    return {
        "referencing_P": list(referencing_cfg.as_tuple()),
        "estimates": [
            {"P": list(e.config.as_tuple()), "z_c_star": e.z_c_star.tolist(), "axis_star": e.axis_star.tolist()}
            for e in estimates
        ],
    }


def estimates_from_dict(data: dict) -> tuple[StageConfig, list[TrackerEstimate]]:
    ref = StageConfig.from_seq(data["referencing_P"])
    out = []
    for i, e in enumerate(data["estimates"]):
        try:
            out.append(
                TrackerEstimate(
                    StageConfig.from_seq(e["P"]),
                    as_point(e["z_c_star"]),
                    normalize(as_point(e["axis_star"])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"estimate {i}: {exc}") from exc
    return ref, out
