# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled z-buffer scan conversion. Mirrors shforge._raster_py operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, isfinite, INFINITY

cnp.import_array()

DEF Z_NEAR = 1e-6


def rasterize_kernel(const double[:, ::1] screen, const long[:, ::1] faces, int width, int height):
    cdef Py_ssize_t nf = faces.shape[0]
    face_id_arr = np.full((height, width), -1, dtype=np.int32)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    depth_arr = np.full((height, width), np.inf, dtype=np.float64)
    cdef int[:, ::1] face_id = face_id_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] depth = depth_arr

    cdef Py_ssize_t f
    cdef long i0, i1, i2
    cdef double x0, y0, z0, x1, y1, z1, x2, y2, z2
    cdef double area, px, py, w0, w1, w2, l0, l1, l2, q0, q1, q2, s, zz
    cdef int xmin, xmax, ymin, ymax, x, y
    cdef double lo, hi

    for f in range(nf):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        x0 = screen[i0, 0]; y0 = screen[i0, 1]; z0 = screen[i0, 2]
        x1 = screen[i1, 0]; y1 = screen[i1, 1]; z1 = screen[i1, 2]
        x2 = screen[i2, 0]; y2 = screen[i2, 1]; z2 = screen[i2, 2]
        if not (z0 > Z_NEAR and z1 > Z_NEAR and z2 > Z_NEAR):
            continue
        if not (isfinite(x0) and isfinite(y0) and isfinite(x1) and isfinite(y1)
                and isfinite(x2) and isfinite(y2)):
            continue
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        lo = min(x0, min(x1, x2))
        hi = max(x0, max(x1, x2))
        lo = ceil(lo - 0.5)
        hi = floor(hi - 0.5)
        if lo < 0:
            lo = 0
        if hi > width - 1:
            hi = width - 1
        if hi < lo:
            continue
        xmin = <int>lo
        xmax = <int>hi
        lo = min(y0, min(y1, y2))
        hi = max(y0, max(y1, y2))
        lo = ceil(lo - 0.5)
        hi = floor(hi - 0.5)
        if lo < 0:
            lo = 0
        if hi > height - 1:
            hi = height - 1
        if hi < lo:
            continue
        ymin = <int>lo
        ymax = <int>hi
        for y in range(ymin, ymax + 1):
            py = y + 0.5
            for x in range(xmin, xmax + 1):
                px = x + 0.5
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if area > 0:
                    if w0 < 0 or w1 < 0 or w2 < 0:
                        continue
                else:
                    if w0 > 0 or w1 > 0 or w2 > 0:
                        continue
                l0 = w0 / area
                l1 = w1 / area
                l2 = w2 / area
                q0 = l0 / z0
                q1 = l1 / z1
                q2 = l2 / z2
                s = q0 + q1 + q2
                zz = 1.0 / s
                if zz < depth[y, x]:
                    depth[y, x] = zz
                    face_id[y, x] = <int>f
                    bary[y, x, 0] = q0 / s
                    bary[y, x, 1] = q1 / s
                    bary[y, x, 2] = q2 / s
    return face_id_arr, bary_arr, depth_arr
