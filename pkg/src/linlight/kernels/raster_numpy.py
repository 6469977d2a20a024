"""Pure-numpy lane for rasterization: python loop over triangles, vectorized
over each triangle's bounding box."""

import numpy as np


def raster_core(pts, z, tris, h, w, use_z):
    tri_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((3, h, w), dtype=np.float32)
    depth = np.full((h, w), np.inf, dtype=np.float32)
    ndeg = 0
    for f in range(tris.shape[0]):
        i0, i1, i2 = tris[f]
        if use_z and (z[i0] <= 0 or z[i1] <= 0 or z[i2] <= 0):
            continue
        p0, p1, p2 = pts[i0], pts[i1], pts[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(area) < 1e-12:
            ndeg += 1
            continue
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]) - 0.5)), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]) - 0.5)), w - 1)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]) - 0.5)), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]) - 0.5)), h - 1)
        if xmax < xmin or ymax < ymin:
            continue
        cy, cx = np.mgrid[ymin:ymax + 1, xmin:xmax + 1].astype(np.float64)
        cx += 0.5
        cy += 0.5
        inv_area = 1.0 / area
        w0 = ((p1[0] - cx) * (p2[1] - cy) - (p2[0] - cx) * (p1[1] - cy)) * inv_area
        w1 = ((p2[0] - cx) * (p0[1] - cy) - (p0[0] - cx) * (p2[1] - cy)) * inv_area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        sl = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
        if use_z:
            izp = w0 / z[i0] + w1 / z[i1] + w2 / z[i2]
            dz = np.where(inside, 1.0 / np.where(izp != 0, izp, 1.0), np.inf)
            win = inside & (dz < depth[sl])
            depth[sl] = np.where(win, dz, depth[sl])
        else:
            win = inside
        tri_id[sl] = np.where(win, f, tri_id[sl])
        for k, wk in enumerate((w0, w1, w2)):
            bary[k][sl] = np.where(win, wk, bary[k][sl])
    return tri_id, bary, depth, ndeg


def scatter_tex(gtex, tidx, wgt, gpix):
    c = gtex.shape[0]
    flat = (gpix[:, :, None] * wgt[None, :, :]).reshape(c, -1)
    np.add.at(gtex, (slice(None), tidx.ravel()), flat)
