"""Numpy implementation of the batched posing kernel.

Each stage move is written in closed form in the volume frame: a linear
stage translates by ``P * x``, a rotary stage rotates about the line
through its origin along ``x``. Stages are applied bottom first, moving
the origins and axes of the stages above along with the points.
"""

import numpy as np


def _rodrigues(axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotation matrices (n, 3, 3) about unit ``axes`` (n, 3)."""
    n = len(axes)
    K = np.zeros((n, 3, 3))
    K[:, 0, 1] = -axes[:, 2]
    K[:, 0, 2] = axes[:, 1]
    K[:, 1, 0] = axes[:, 2]
    K[:, 1, 2] = -axes[:, 0]
    K[:, 2, 0] = -axes[:, 1]
    K[:, 2, 1] = axes[:, 0]
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def pose_points(origins, axes, configs, points):
    """Pose ``points`` (m, 3) for ``configs`` (n, 4); returns (n, m, 3).

    ``origins`` and ``axes`` (4, 3) are the neutral stage origins and unit
    x-axes in stack order lin1, lin2, gon, rot.
    """
    origins = np.asarray(origins, dtype=float)
    axes = np.asarray(axes, dtype=float)
    cfg = np.asarray(configs, dtype=float).reshape(-1, 4)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(cfg)

    o = np.broadcast_to(origins, (n, 4, 3)).copy()
    x = np.broadcast_to(axes, (n, 4, 3)).copy()
    p = np.broadcast_to(pts, (n, len(pts), 3)).copy()

    for a in range(4):
        value = cfg[:, a]
        if a < 2:
            shift = value[:, None] * x[:, a]
            p += shift[:, None, :]
            o[:, a + 1:] += shift[:, None, :]
            continue
        R = _rodrigues(x[:, a], np.radians(value))
        pivot = o[:, a][:, None, :]
        p = np.einsum("nij,nmj->nmi", R, p - pivot) + pivot
        if a < 3:
            o[:, a + 1:] = np.einsum("nij,nmj->nmi", R, o[:, a + 1:] - pivot) + pivot
            x[:, a + 1:] = np.einsum("nij,nmj->nmi", R, x[:, a + 1:])
    return p
