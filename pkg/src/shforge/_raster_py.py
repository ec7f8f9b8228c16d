"""Pure numpy z-buffer scan conversion (fallback for the compiled kernel).

Arithmetic is written in the same order as the compiled kernel so both
backends agree bit for bit.
"""

import math

import numpy as np

Z_NEAR = 1e-6


def rasterize_kernel(screen: np.ndarray, faces: np.ndarray, width: int, height: int):
    face_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.full((height, width), np.inf, dtype=np.float64)

    tri = screen[faces]  # (F, 3 verts, 3)
    x, y, z = tri[..., 0], tri[..., 1], tri[..., 2]
    ok = np.all(z > Z_NEAR, axis=1) & np.all(np.isfinite(tri[..., :2]), axis=(1, 2))
    area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0])
    ok &= area != 0.0
    for f in np.flatnonzero(ok):
        x0, x1, x2 = x[f]
        y0, y1, y2 = y[f]
        z0, z1, z2 = z[f]
        xmin = max(0.0, math.ceil(min(x0, x1, x2) - 0.5))
        xmax = min(width - 1.0, math.floor(max(x0, x1, x2) - 0.5))
        ymin = max(0.0, math.ceil(min(y0, y1, y2) - 0.5))
        ymax = min(height - 1.0, math.floor(max(y0, y1, y2) - 0.5))
        if xmax < xmin or ymax < ymin:
            continue
        xmin, xmax, ymin, ymax = int(xmin), int(xmax), int(ymin), int(ymax)
        px = np.arange(xmin, xmax + 1, dtype=np.float64)[None, :] + 0.5
        py = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None] + 0.5
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        a = area[f]
        if a > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        q0 = (w0 / a) / z0
        q1 = (w1 / a) / z1
        q2 = (w2 / a) / z2
        s = q0 + q1 + q2
        zz = 1.0 / s
        region = depth[ymin:ymax + 1, xmin:xmax + 1]
        win = inside & (zz < region)
        if not win.any():
            continue
        region[win] = zz[win]
        face_id[ymin:ymax + 1, xmin:xmax + 1][win] = f
        b = bary[ymin:ymax + 1, xmin:xmax + 1]
        b[win, 0] = (q0 / s)[win]
        b[win, 1] = (q1 / s)[win]
        b[win, 2] = (q2 / s)[win]
    return face_id, bary, depth
