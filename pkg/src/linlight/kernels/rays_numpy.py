"""Pure-numpy lane for shadow rays: brute-force any-hit over all triangles.

No BVH here; the whole triangle list is tested per ray with chunked
broadcasting.  Slow on large scenes but dependency-free.
"""

import numpy as np

_CHUNK = 512


def vis_matrix(orig, dirs, v0, e1, e2,
               nmin=None, nmax=None, nleft=None, nright=None,
               nstart=None, ncount=None, torder=None, tmin=1e-4):
    npts = orig.shape[0]
    nl = dirs.shape[0]
    out = np.ones((npts, nl), dtype=np.uint8)
    for li in range(nl):
        d = dirs[li].astype(np.float64)
        pvec = np.cross(np.broadcast_to(d, e2.shape), e2)  # (F,3)
        det = np.einsum("fk,fk->f", e1.astype(np.float64), pvec)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        for s in range(0, npts, _CHUNK):
            o = orig[s:s + _CHUNK].astype(np.float64)
            tvec = o[:, None, :] - v0[None, :, :]
            u = np.einsum("cfk,fk->cf", tvec, pvec) * inv[None]
            qvec = np.cross(tvec, e1[None, :, :])
            v = (qvec @ d) * inv[None]
            t = np.einsum("cfk,fk->cf", qvec, e2.astype(np.float64)) * inv[None]
            hit = ok[None] & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > tmin)
            out[s:s + _CHUNK, li] = ~hit.any(axis=1)
    return out
