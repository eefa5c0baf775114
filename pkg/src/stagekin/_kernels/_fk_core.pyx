# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled batched posing kernel; same contract as ``_fk_py.pose_points``."""

import numpy as np
from libc.math cimport sin, cos, M_PI


cdef inline void _rotate(double[3] k, double c, double s, double[3] pivot,
                         double* v, bint is_point) noexcept nogil:
    # Rodrigues: v' = v c + (k x v) s + k (k.v)(1 - c), about pivot for points
    cdef double w0, w1, w2, kd, r0, r1, r2
    if is_point:
        w0 = v[0] - pivot[0]; w1 = v[1] - pivot[1]; w2 = v[2] - pivot[2]
    else:
        w0 = v[0]; w1 = v[1]; w2 = v[2]
    kd = (k[0] * w0 + k[1] * w1 + k[2] * w2) * (1.0 - c)
    r0 = w0 * c + (k[1] * w2 - k[2] * w1) * s + k[0] * kd
    r1 = w1 * c + (k[2] * w0 - k[0] * w2) * s + k[1] * kd
    r2 = w2 * c + (k[0] * w1 - k[1] * w0) * s + k[2] * kd
    if is_point:
        v[0] = r0 + pivot[0]; v[1] = r1 + pivot[1]; v[2] = r2 + pivot[2]
    else:
        v[0] = r0; v[1] = r1; v[2] = r2


def pose_points(origins, axes, configs, points):
    cdef double[:, ::1] o0 = np.ascontiguousarray(origins, dtype=np.float64).reshape(4, 3)
    cdef double[:, ::1] x0 = np.ascontiguousarray(axes, dtype=np.float64).reshape(4, 3)
    cdef double[:, ::1] cfg = np.ascontiguousarray(configs, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = cfg.shape[0]
    cdef Py_ssize_t m = pts.shape[0]
    out_arr = np.empty((n, m, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    cdef double o[4][3]
    cdef double x[4][3]
    cdef double k[3]
    cdef double pivot[3]
    cdef double value, c, s
    cdef Py_ssize_t i, a, b, j, d

    with nogil:
        for i in range(n):
            for a in range(4):
                for d in range(3):
                    o[a][d] = o0[a, d]
                    x[a][d] = x0[a, d]
            for j in range(m):
                for d in range(3):
                    out[i, j, d] = pts[j, d]
            for a in range(4):
                value = cfg[i, a]
                if value == 0.0:
                    continue
                if a < 2:
                    for d in range(3):
                        k[d] = value * x[a][d]
                    for j in range(m):
                        for d in range(3):
                            out[i, j, d] += k[d]
                    for b in range(a + 1, 4):
                        for d in range(3):
                            o[b][d] += k[d]
                    continue
                value = value * M_PI / 180.0
                c = cos(value)
                s = sin(value)
                for d in range(3):
                    k[d] = x[a][d]
                    pivot[d] = o[a][d]
                for j in range(m):
                    _rotate(k, c, s, pivot, &out[i, j, 0], True)
                for b in range(a + 1, 4):
                    _rotate(k, c, s, pivot, o[b], True)
                    _rotate(k, c, s, pivot, x[b], False)
    return out_arr
