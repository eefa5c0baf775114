"""Dataset schema, JSON loading/saving, grouping and unit conversion.

Dataset file layout (UTF-8 JSON)::

    {"unit": "voxel" | "mm",
     "voxel_size_mm": 0.025,
     "dial_offsets": {"P1": 0, "P2": 0, "P3": 0, "P4": 0},
     "scans": [{"id": 1, "types": [1, 3], "P": [0, 0, 0, 0],
                "corners": {"c1": [x, y, z], ..., "c4": [x, y, z]},
                "cornea_points": [[x, y, z], ...],
                "eyeball_points": [[x, y, z], ...]}, ...]}

``P`` holds the dial readings; the stored stage settings are
``P - dial_offsets``, i.e. offsets from the trained neutral pose.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .geom import DegenerateInputError

DEFAULT_VOXEL_SIZE_MM = 0.025
MAX_LINEAR_TRAVEL_MM = 25.0
MAX_GONIOMETER_DEG = 25.0
MAX_ROTATION_DEG = 360.0
CORNER_KEYS = ("c1", "c2", "c3", "c4")
STAGE_KEYS = ("P1", "P2", "P3", "P4")


class DatasetError(ValueError):
    """The dataset file could not be read or parsed."""


class SchemaError(DatasetError):
    """The dataset content violates the schema or its invariants."""


class ScanType(enum.IntEnum):
    T1 = 1  # neutral, training
    T2 = 2  # neutral, testing
    T3 = 3  # linear stage training
    T4 = 4  # goniometer / rotation training
    T5 = 5  # per-DOF testing


SURFACE_TYPES = frozenset({ScanType.T1, ScanType.T2})


@dataclass(frozen=True)
class StageConfig:
    """Microstage settings relative to neutral: P1, P2 in mm, P3, P4 in degrees."""

    P1: float = 0.0
    P2: float = 0.0
    P3: float = 0.0
    P4: float = 0.0

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"stage settings must be finite: {vals}")
        if abs(self.P1) > MAX_LINEAR_TRAVEL_MM or abs(self.P2) > MAX_LINEAR_TRAVEL_MM:
            raise ValueError(f"linear stage setting beyond +-{MAX_LINEAR_TRAVEL_MM} mm: {vals}")
        if abs(self.P3) > MAX_GONIOMETER_DEG:
            raise ValueError(f"goniometer setting beyond +-{MAX_GONIOMETER_DEG} deg: {vals}")
        if not abs(self.P4) < MAX_ROTATION_DEG:
            raise ValueError(f"rotation setting must be within (-360, 360) deg: {vals}")

    @classmethod
    def from_seq(cls, values: Iterable[float]) -> "StageConfig":
        vals = [float(v) for v in values]
        if len(vals) != 4:
            raise ValueError(f"expected 4 stage settings, got {len(vals)}")
        return cls(*vals)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.P1, self.P2, self.P3, self.P4)

    @property
    def is_neutral(self) -> bool:
        return self.as_tuple() == (0.0, 0.0, 0.0, 0.0)

    def moved_axes(self) -> tuple[int, ...]:
        """Indices (0-3) of the stages that are away from neutral."""
        return tuple(i for i, v in enumerate(self.as_tuple()) if v != 0.0)


NEUTRAL = StageConfig()


@dataclass(frozen=True)
class ScanRecord:
    id: int
    stage_settings: StageConfig
    scan_types: frozenset
    corners: np.ndarray  # (4, 3), row k-1 holds corner c^k
    cornea_points: np.ndarray | None = None
    eyeball_points: np.ndarray | None = None

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=float)
        if corners.shape != (4, 3) or not np.all(np.isfinite(corners)):
            raise SchemaError(f"scan {self.id}: corners must be four finite 3D points")
        object.__setattr__(self, "corners", corners)
        types = frozenset(ScanType(t) for t in self.scan_types)
        if not types:
            raise SchemaError(f"scan {self.id}: at least one scan type is required")
        object.__setattr__(self, "scan_types", types)
        for name in ("cornea_points", "eyeball_points"):
            pts = getattr(self, name)
            if pts is None:
                continue
            pts = np.asarray(pts, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3 or not np.all(np.isfinite(pts)):
                raise SchemaError(f"scan {self.id}: {name} must be a list of finite 3D points")
            object.__setattr__(self, name, pts)
        has_surface = self.cornea_points is not None and self.eyeball_points is not None
        wants_surface = bool(types & SURFACE_TYPES)
        if wants_surface and not has_surface:
            raise SchemaError(
                f"scan {self.id}: type 1/2 scans must carry cornea_points and eyeball_points"
            )
        if not wants_surface and (self.cornea_points is not None or self.eyeball_points is not None):
            raise SchemaError(f"scan {self.id}: surface samples are only allowed on type 1/2 scans")

    def corner(self, k: int) -> np.ndarray:
        if k not in (1, 2, 3, 4):
            raise ValueError(f"corner index must be 1-4, got {k}")
        return self.corners[k - 1]

    def has_type(self, p) -> bool:
        return ScanType(p) in self.scan_types


@dataclass(frozen=True)
class Dataset:
    unit: str
    scans: tuple
    voxel_size_mm: float = DEFAULT_VOXEL_SIZE_MM
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.unit not in ("voxel", "mm"):
            raise SchemaError(f"unit must be 'voxel' or 'mm', got {self.unit!r}")
        if not (math.isfinite(self.voxel_size_mm) and self.voxel_size_mm > 0):
            raise SchemaError(f"voxel_size_mm must be positive, got {self.voxel_size_mm}")
        scans = tuple(sorted(self.scans, key=lambda s: s.id))
        object.__setattr__(self, "scans", scans)
        by_id = {}
        for s in scans:
            if s.id in by_id:
                raise SchemaError(f"duplicate scan id {s.id}")
            by_id[s.id] = s
        object.__setattr__(self, "_by_id", by_id)

    def scan(self, scan_id: int) -> ScanRecord:
        try:
            return self._by_id[scan_id]
        except KeyError:
            raise KeyError(f"no scan with id {scan_id}") from None

    def scans_of_type(self, p) -> list[ScanRecord]:
        return [s for s in self.scans if s.has_type(p)]

    def to_dict(self) -> dict:
        out = {
            "unit": self.unit,
            "voxel_size_mm": self.voxel_size_mm,
            "dial_offsets": {k: 0.0 for k in STAGE_KEYS},
            "scans": [],
        }
        for s in self.scans:
            rec = {
                "id": s.id,
                "types": sorted(int(t) for t in s.scan_types),
                "P": list(s.stage_settings.as_tuple()),
                "corners": {key: s.corners[i].tolist() for i, key in enumerate(CORNER_KEYS)},
            }
            if s.cornea_points is not None:
                rec["cornea_points"] = s.cornea_points.tolist()
            if s.eyeball_points is not None:
                rec["eyeball_points"] = s.eyeball_points.tolist()
            out["scans"].append(rec)
        return out


def _point(value, where: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise SchemaError(f"{where}: expected an array of three numbers")
    try:
        pt = [float(v) for v in value]
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: coordinates must be numbers") from None
    if not all(math.isfinite(v) for v in pt):
        raise SchemaError(f"{where}: coordinates must be finite")
    return pt


def dataset_from_dict(data: dict) -> Dataset:
    if not isinstance(data, dict):
        raise SchemaError("dataset top level must be an object")
    if "unit" not in data:
        raise SchemaError("dataset is missing the 'unit' field")
    if "scans" not in data or not isinstance(data["scans"], list):
        raise SchemaError("dataset is missing the 'scans' list")
    voxel_size = float(data.get("voxel_size_mm", DEFAULT_VOXEL_SIZE_MM))
    offsets_raw = data.get("dial_offsets") or {}
    offsets = [float(offsets_raw.get(k, 0.0)) for k in STAGE_KEYS]

    scans = []
    seen: set[int] = set()
    for idx, raw in enumerate(data["scans"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise SchemaError(f"scan entry {idx} is missing the 'id' field")
        sid = raw["id"]
        if not isinstance(sid, int) or isinstance(sid, bool):
            raise SchemaError(f"scan entry {idx}: id must be an integer")
        if sid in seen:
            raise SchemaError(f"duplicate scan id {sid}")
        seen.add(sid)
        for key in ("types", "P", "corners"):
            if key not in raw:
                raise SchemaError(f"scan {sid} is missing the '{key}' field")
        try:
            types = frozenset(ScanType(int(t)) for t in raw["types"])
        except (TypeError, ValueError):
            raise SchemaError(f"scan {sid}: types must be integers in 1..5") from None
        P = raw["P"]
        if not isinstance(P, list) or len(P) != 4:
            raise SchemaError(f"scan {sid}: 'P' must hold four stage settings")
        try:
            cfg = StageConfig.from_seq(float(p) - o for p, o in zip(P, offsets))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"scan {sid}: invalid stage settings ({exc})") from None
        corners_raw = raw["corners"]
        if not isinstance(corners_raw, dict):
            raise SchemaError(f"scan {sid}: 'corners' must be an object")
        corners = []
        for key in CORNER_KEYS:
            if key not in corners_raw:
                raise SchemaError(f"scan {sid} is missing corner {key}")
            corners.append(_point(corners_raw[key], f"scan {sid} corner {key}"))
        surfaces = {}
        for name in ("cornea_points", "eyeball_points"):
            if name in raw and raw[name] is not None:
                if not isinstance(raw[name], list):
                    raise SchemaError(f"scan {sid}: {name} must be a list")
                pts = [_point(p, f"scan {sid} {name}[{i}]") for i, p in enumerate(raw[name])]
                surfaces[name] = np.asarray(pts, dtype=float).reshape(-1, 3)
        scans.append(ScanRecord(sid, cfg, types, np.asarray(corners), **surfaces))
    return Dataset(unit=data["unit"], scans=tuple(scans), voxel_size_mm=voxel_size)


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse dataset {path}: {exc}") from exc
    return dataset_from_dict(data)


def dumps_dataset(ds: Dataset) -> str:
    return json.dumps(ds.to_dict(), indent=1) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def dataset_checksum(ds: Dataset) -> str:
    canonical = json.dumps(ds.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _scale(ds: Dataset, fn, unit: str) -> Dataset:
    scans = []
    for s in ds.scans:
        scans.append(
            replace(
                s,
                corners=fn(s.corners),
                cornea_points=None if s.cornea_points is None else fn(s.cornea_points),
                eyeball_points=None if s.eyeball_points is None else fn(s.eyeball_points),
            )
        )
    return Dataset(unit=unit, scans=tuple(scans), voxel_size_mm=ds.voxel_size_mm)


def to_millimeters(ds: Dataset) -> Dataset:
    if ds.unit == "mm":
        warnings.warn("dataset is already in millimetres; returned unchanged", stacklevel=2)
        return ds
    return _scale(ds, lambda a: a * ds.voxel_size_mm, "mm")


def to_voxels(ds: Dataset) -> Dataset:
    if ds.unit == "voxel":
        warnings.warn("dataset is already in voxels; returned unchanged", stacklevel=2)
        return ds
    return _scale(ds, lambda a: a / ds.voxel_size_mm, "voxel")


def group_corners(ds: Dataset, k: int, p) -> np.ndarray:
    """Corner ``c^k`` of every scan tagged ``p``, ordered by scan id."""
    if k not in (1, 2, 3, 4):
        raise ValueError(f"corner index must be 1-4, got {k}")
    p = ScanType(p)
    pts = [s.corner(k) for s in ds.scans if s.has_type(p)]
    if not pts:
        raise DegenerateInputError(f"no scans of type {int(p)} in dataset")
    return np.asarray(pts)
