"""Geometric estimators used during stage calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import ConditioningError, DegenerateInputError, as_point, as_points

#: Algebraic sphere systems above this condition number are rejected.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float
    rms_residual: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        if self.rms_residual < 0:
            raise ValueError("rms residual must be non-negative")


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    radius: float
    normal: np.ndarray


def fit_sphere_lsq(points) -> SphereFit:
    """Algebraic least-squares sphere fit.

    Expanding ``|p - c|^2 = r^2`` gives the linear model
    ``|p|^2 = 2 p.c + (r^2 - |c|^2)`` in the unknowns ``c`` and
    ``k = r^2 - |c|^2``, which is solved in one shot. Exact on noise-free
    samples; no iteration.
    """
    pts = as_points(points)
    if len(pts) < 4:
        raise DegenerateInputError(f"sphere fit needs at least 4 points, got {len(pts)}")
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[2] <= 1e-10 * max(sv[0], 1e-300):
        raise DegenerateInputError("sphere fit points are coplanar")

    # centring the design matrix keeps the condition number scale-free
    offset = pts.mean(axis=0)
    q = pts - offset
    A = np.column_stack([2.0 * q, np.ones(len(q))])
    b = np.einsum("ij,ij->i", q, q)
    cond = np.linalg.cond(A)
    if not cond < MAX_CONDITION:
        raise ConditioningError("sphere fit system is ill-conditioned", cond)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c_local = sol[:3]
    r2 = sol[3] + c_local @ c_local
    if not r2 > 0:
        raise DegenerateInputError("sphere fit produced a non-positive squared radius")
    radius = float(np.sqrt(r2))
    center = c_local + offset
    resid = np.linalg.norm(pts - center, axis=1) - radius
    return SphereFit(center, radius, float(np.sqrt(np.mean(resid**2))))


def fit_circle_3pt(p1, p2, p3) -> CircleFit:
    """The unique circle through three 3D points (circumcircle)."""
    a, b, c = as_point(p1), as_point(p2), as_point(p3)
    u = b - a
    v = c - a
    w = np.cross(u, v)
    ww = w @ w
    scale = max(u @ u, v @ v)
    if scale == 0.0 or np.sqrt(ww) <= 1e-12 * scale:
        raise DegenerateInputError("circle points are collinear or coincident")
    # circumcentre relative to a, from the standard cross-product formula
    rel = (np.cross(w, u) * (v @ v) + np.cross(v, w) * (u @ u)) / (2.0 * ww)
    center = a + rel
    return CircleFit(center, float(np.linalg.norm(rel)), w / np.sqrt(ww))


def plane_normal(p_a, p_b, p_c) -> np.ndarray:
    """Unit normal of ``(p_a - p_b) x (p_a - p_c)``."""
    a, b, c = as_point(p_a), as_point(p_b), as_point(p_c)
    n = np.cross(a - b, a - c)
    norm = np.linalg.norm(n)
    scale = max(np.linalg.norm(a - b), np.linalg.norm(a - c))
    if scale == 0.0 or norm <= 1e-12 * scale**2:
        raise DegenerateInputError("plane points are collinear or coincident")
    return n / norm
