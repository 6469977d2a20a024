"""Numba lane for shadow-ray queries: stack-based BVH any-hit traversal."""

import numpy as np
from numba import njit, prange

_BIG = np.float32(1e30)


@njit(cache=True, inline="always")
def _slab_hit(ox, oy, oz, ix, iy, iz, bminx, bminy, bminz, bmaxx, bmaxy, bmaxz):
    t1 = (bminx - ox) * ix
    t2 = (bmaxx - ox) * ix
    tmin = min(t1, t2)
    tmax = max(t1, t2)
    t1 = (bminy - oy) * iy
    t2 = (bmaxy - oy) * iy
    tmin = max(tmin, min(t1, t2))
    tmax = min(tmax, max(t1, t2))
    t1 = (bminz - oz) * iz
    t2 = (bmaxz - oz) * iz
    tmin = max(tmin, min(t1, t2))
    tmax = min(tmax, max(t1, t2))
    return tmax >= max(tmin, np.float32(0.0))


@njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f, tmin):
    # Moller-Trumbore, any hit with t > tmin
    px = dy * e2[f, 2] - dz * e2[f, 1]
    py = dz * e2[f, 0] - dx * e2[f, 2]
    pz = dx * e2[f, 1] - dy * e2[f, 0]
    det = e1[f, 0] * px + e1[f, 1] * py + e1[f, 2] * pz
    if abs(det) < 1e-12:
        return False
    inv = 1.0 / det
    tx = ox - v0[f, 0]
    ty = oy - v0[f, 1]
    tz = oz - v0[f, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return False
    qx = ty * e1[f, 2] - tz * e1[f, 1]
    qy = tz * e1[f, 0] - tx * e1[f, 2]
    qz = tx * e1[f, 1] - ty * e1[f, 0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return False
    t = (e2[f, 0] * qx + e2[f, 1] * qy + e2[f, 2] * qz) * inv
    return t > tmin


@njit(cache=True)
def _any_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2,
             nmin, nmax, nleft, nright, nstart, ncount, torder, tmin):
    ix = 1.0 / dx if abs(dx) > 1e-12 else _BIG
    iy = 1.0 / dy if abs(dy) > 1e-12 else _BIG
    iz = 1.0 / dz if abs(dz) > 1e-12 else _BIG
    stack = np.empty(64, dtype=np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        if not _slab_hit(ox, oy, oz, ix, iy, iz,
                         nmin[n, 0], nmin[n, 1], nmin[n, 2],
                         nmax[n, 0], nmax[n, 1], nmax[n, 2]):
            continue
        if ncount[n] > 0:
            for k in range(nstart[n], nstart[n] + ncount[n]):
                if _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, torder[k], tmin):
                    return True
        else:
            stack[sp] = nleft[n]
            stack[sp + 1] = nright[n]
            sp += 2
    return False


@njit(cache=True, parallel=True)
def vis_matrix(orig, dirs, v0, e1, e2,
               nmin, nmax, nleft, nright, nstart, ncount, torder, tmin):
    npts = orig.shape[0]
    nl = dirs.shape[0]
    out = np.empty((npts, nl), dtype=np.uint8)
    for p in prange(npts):
        ox = orig[p, 0]
        oy = orig[p, 1]
        oz = orig[p, 2]
        for li in range(nl):
            hit = _any_hit(ox, oy, oz, dirs[li, 0], dirs[li, 1], dirs[li, 2],
                           v0, e1, e2, nmin, nmax, nleft, nright,
                           nstart, ncount, torder, tmin)
            out[p, li] = 0 if hit else 1
    return out
