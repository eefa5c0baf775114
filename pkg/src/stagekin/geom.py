"""Frames, homogeneous rigid transforms and SVD point-set registration.

A coordinate system is stored as a 4x4 matrix of homogeneous *position*
columns: column 0 is the origin, columns 1-3 are the tips of the unit
basis vectors, all expressed in the parent frame. The bottom row is all
ones. This differs from the usual isometry layout but has the advantage
that applying any rigid transform to the matrix yields the moved frame
directly.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

TOL = 1e-9

#: The parent frame itself, written in the position-column layout.
WORLD_CS = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 1.0],
    ]
)


class DegenerateInputError(ValueError):
    """Raised when a geometric estimate is undetermined by its input."""


class ConditioningError(DegenerateInputError):
    """Raised when a linear system is too ill-conditioned to trust."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3g})")
        self.condition_number = condition_number


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite point {arr}")
    return arr


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite values")
    return arr


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 1e-12:
        raise DegenerateInputError(f"cannot normalize near-zero vector {v}")
    return v / n


# --------------------------------------------------------------------------
# rigid transforms
# --------------------------------------------------------------------------


def make_transform(rotation=None, translation=None) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if translation is not None:
        T[:3, 3] = translation
    return T


def translation(t) -> np.ndarray:
    return make_transform(translation=as_point(t))


def rotation_matrix(axis, angle_rad: float) -> np.ndarray:
    """Right-handed rotation about ``axis`` (Rodrigues)."""
    k = normalize(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def rotation_about_line(point, axis, angle_rad: float) -> np.ndarray:
    """4x4 rotation about the line through ``point`` with direction ``axis``."""
    R = rotation_matrix(axis, angle_rad)
    p = as_point(point)
    return make_transform(R, p - R @ p)


def invert_transform(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    R = T[:3, :3]
    return make_transform(R.T, -R.T @ T[:3, 3])


def is_rigid(T, tol: float = TOL) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.allclose(T[3], [0, 0, 0, 1], atol=tol, rtol=0):
        return False
    R = T[:3, :3]
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def apply_transform(T, points) -> np.ndarray:
    """Apply a 4x4 transform to one point (3,) or many points (n, 3)."""
    pts = np.asarray(points, dtype=float)
    return pts @ T[:3, :3].T + T[:3, 3]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# --------------------------------------------------------------------------
# coordinate systems
# --------------------------------------------------------------------------


def cs_from_axes(origin, x_axis, y_axis, z_axis) -> np.ndarray:
    o = as_point(origin)
    cs = np.ones((4, 4))
    cs[:3, 0] = o
    cs[:3, 1] = o + x_axis
    cs[:3, 2] = o + y_axis
    cs[:3, 3] = o + z_axis
    return cs


def cs_origin(cs) -> np.ndarray:
    return np.asarray(cs, dtype=float)[:3, 0].copy()


def cs_axes(cs) -> np.ndarray:
    """3x3 matrix whose columns are the unit x, y, z directions of ``cs``."""
    cs = np.asarray(cs, dtype=float)
    return cs[:3, 1:] - cs[:3, :1]


def cs_x_axis(cs) -> np.ndarray:
    return cs_axes(cs)[:, 0]


def check_cs(cs, tol: float = TOL) -> None:
    """Raise ``ValueError`` unless ``cs`` is an orthonormal right-handed frame."""
    cs = np.asarray(cs, dtype=float)
    if cs.shape != (4, 4):
        raise ValueError(f"coordinate system must be 4x4, got {cs.shape}")
    if not np.all(np.isfinite(cs)):
        raise ValueError("coordinate system contains non-finite values")
    if not np.allclose(cs[3], 1.0, atol=tol, rtol=0):
        raise ValueError("coordinate system bottom row must be all ones")
    A = cs_axes(cs)
    if not np.allclose(A.T @ A, np.eye(3), atol=tol, rtol=0):
        raise ValueError("coordinate system axes are not orthonormal")
    handed = np.dot(np.cross(A[:, 0], A[:, 1]), A[:, 2])
    if abs(handed - 1.0) > tol:
        raise ValueError("coordinate system is not right-handed")


def is_valid_cs(cs, tol: float = TOL) -> bool:
    try:
        check_cs(cs, tol)
    except ValueError:
        return False
    return True


def complete_right_handed_basis(origin, x_dir) -> np.ndarray:
    """Build a right-handed frame whose x-axis is ``normalize(x_dir)``.

    The helper axis is the world axis least parallel to ``x_dir`` (lowest
    index on ties), so the result is deterministic.
    """
    x_dir = np.asarray(x_dir, dtype=float)
    if not np.linalg.norm(x_dir) > 1e-12:
        raise DegenerateInputError("basis direction has zero length")
    x = x_dir / np.linalg.norm(x_dir)
    helper = np.eye(3)[int(np.argmin(np.abs(x)))]
    z = np.cross(x, helper)
    z /= np.linalg.norm(z)
    y = np.cross(z, x)
    return cs_from_axes(origin, x, y, z)


# --------------------------------------------------------------------------
# registration and basis change
# --------------------------------------------------------------------------


def estimate_rigid_transform(source, target) -> np.ndarray:
    """Least-squares rigid transform mapping ``source`` onto ``target``.

    SVD of the cross-covariance of the centred point sets; a reflection in
    the SVD solution is corrected so that det(R) = +1.
    """
    src = as_points(source)
    dst = as_points(target)
    if src.shape != dst.shape:
        raise DegenerateInputError(
            f"point sets differ in size: {len(src)} vs {len(dst)}"
        )
    if len(src) < 3:
        raise DegenerateInputError(f"need at least 3 correspondences, got {len(src)}")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    A = src - src_c
    B = dst - dst_c
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateInputError("source points are collinear")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return make_transform(R, dst_c - R @ src_c)


def basis_change(cs) -> np.ndarray:
    """Transform taking parent-frame coordinates into coordinates of ``cs``."""
    cs = np.asarray(cs, dtype=float)
    return estimate_rigid_transform(cs[:3].T, WORLD_CS[:3].T)


def change_basis_then_transform(cs_a, T_a, subject):
    """Apply local transform ``T_a`` of frame ``cs_a`` to a frame or point.

    The subject (a 4x4 position-column frame, a point (3,) or points (n, 3),
    all in the parent frame) is moved into ``cs_a``, transformed by
    ``T_a`` and moved back.
    """
    to_a = basis_change(cs_a)
    M = invert_transform(to_a) @ np.asarray(T_a, dtype=float) @ to_a
    subject = np.asarray(subject, dtype=float)
    if subject.shape == (4, 4):
        return M @ subject
    return apply_transform(M, subject)


def express_in(cs, points) -> np.ndarray:
    """Coordinates of parent-frame ``points`` relative to frame ``cs``."""
    return apply_transform(basis_change(cs), points)


def median_points(points: Sequence) -> np.ndarray:
    """Component-wise median; even counts average the two middle values."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        raise DegenerateInputError("median of an empty point set")
    return np.median(arr.reshape(-1, 3), axis=0)


def angle_between_deg(u, v) -> float:
    u = normalize(u)
    v = normalize(v)
    # atan2 form keeps precision near 0 and 180 degrees
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v))))
