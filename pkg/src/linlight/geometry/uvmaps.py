"""UV-space geometry maps: unwrap, displacement refinement, refined normals.

Texel (row iy, col ix) at resolution R samples uv = ((ix+0.5)/R, (iy+0.5)/R).
Displacement is bounded to (-3, 3) mm by 3*(2*sigmoid(raw) - 1) applied along
the coarse normal; refined normals come from central differences of the
refined position map, falling back to coarse normals on seams.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .. import tensor as T
from ..tensor import Tensor

DISPLACEMENT_RANGE_MM = 3.0
# sigmoid saturates to exactly 0/1 in float; squeezing its output keeps the
# |delta| < 3 mm bound strict for any raw value
_SQUEEZE = 1.0 - 1e-6


@dataclass
class UvGeometryMaps:
    position: np.ndarray   # (R,R,3) mm, zero outside the mask
    normal: np.ndarray     # (R,R,3) unit, zero outside the mask
    valid: np.ndarray      # (R,R) bool
    degenerate_faces: int = 0

    @property
    def resolution(self) -> int:
        return self.position.shape[0]


def vertex_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted face normals accumulated per vertex, then normalized."""
    v = verts.astype(np.float64)
    fn = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, faces[:, k], fn)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.where(norm > 1e-12, out / np.maximum(norm, 1e-12), 0.0)
    return out.astype(np.float32)


def unwrap(rig, posed_vertices: np.ndarray, resolution: int) -> UvGeometryMaps:
    """Rasterize the posed mesh into UV space at texel centers."""
    r = int(resolution)
    pts = rig.uv.astype(np.float32) * r
    tri_id, bary, _, ndeg = kernels.raster_core(
        pts, np.ones(rig.n_vertices, np.float32), rig.faces, r, r, False)
    valid = tri_id >= 0
    vn = vertex_normals(posed_vertices, rig.faces)

    pos = np.zeros((r, r, 3), np.float32)
    nrm = np.zeros((r, r, 3), np.float32)
    idx = tri_id[valid]
    bw = bary[:, valid]                          # (3, P)
    for k in range(3):
        vid = rig.faces[idx, k]
        pos[valid] += bw[k, :, None] * posed_vertices[vid]
        nrm[valid] += bw[k, :, None] * vn[vid]
    nl = np.linalg.norm(nrm[valid], axis=1, keepdims=True)
    nrm[valid] = nrm[valid] / np.maximum(nl, 1e-12)
    return UvGeometryMaps(pos, nrm, valid, int(ndeg))


def displacement_from_raw(raw: np.ndarray) -> np.ndarray:
    """Bounded displacement in mm: 3*(2*sigmoid(raw) - 1), always in (-3, 3)."""
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-raw.astype(np.float64)))
    return (DISPLACEMENT_RANGE_MM * _SQUEEZE * (2.0 * s - 1.0)).astype(np.float32)


def interior_mask(valid: np.ndarray) -> np.ndarray:
    """Texels whose 4 neighbours exist and are valid (central diffs safe)."""
    ok = valid.copy()
    ok[0, :] = ok[-1, :] = False
    ok[:, 0] = ok[:, -1] = False
    ok[1:, :] &= valid[:-1, :]
    ok[:-1, :] &= valid[1:, :]
    ok[:, 1:] &= valid[:, :-1]
    ok[:, :-1] &= valid[:, 1:]
    return ok


def _normals_from_positions(pos: np.ndarray, coarse_n: np.ndarray,
                            valid: np.ndarray) -> np.ndarray:
    """Central-difference normals with coarse fallback on seams/borders."""
    tu = np.zeros_like(pos)
    tv = np.zeros_like(pos)
    tu[:, 1:-1] = 0.5 * (pos[:, 2:] - pos[:, :-2])
    tv[1:-1, :] = 0.5 * (pos[2:, :] - pos[:-2, :])
    n = np.cross(tu, tv)
    # flip to agree with the coarse orientation (mirrored uv islands)
    sign = np.sign(np.sum(n * coarse_n, axis=-1, keepdims=True))
    sign[sign == 0] = 1.0
    n *= sign
    ln = np.linalg.norm(n, axis=-1, keepdims=True)
    ok = interior_mask(valid) & (ln[..., 0] > 1e-9)
    out = np.where(ok[..., None], n / np.maximum(ln, 1e-12), coarse_n)
    out[~valid] = 0.0
    return out.astype(np.float32)


def apply_displacement(maps: UvGeometryMaps, raw: np.ndarray) -> UvGeometryMaps:
    """Refined maps: x_hat = x + delta * n, normals recomputed."""
    delta = displacement_from_raw(np.asarray(raw, dtype=np.float32))
    if delta.shape != maps.valid.shape:
        raise ValueError(f"displacement map {delta.shape} != {maps.valid.shape}")
    pos = maps.position + np.where(maps.valid, delta, 0.0)[..., None] * maps.normal
    nrm = _normals_from_positions(pos, maps.normal, maps.valid)
    pos = np.where(maps.valid[..., None], pos, 0.0).astype(np.float32)
    return UvGeometryMaps(pos, nrm, maps.valid, maps.degenerate_faces)


# ---------------------------------------------------------------------------
# differentiable twin used inside the training graph
# ---------------------------------------------------------------------------

def displacement_from_raw_t(raw: Tensor) -> Tensor:
    """(1,R,R) tensor version of the bounded displacement activation."""
    span = DISPLACEMENT_RANGE_MM * _SQUEEZE
    return T.add_scalar(T.scale(T.sigmoid(raw), 2.0 * span), -span)


def refined_normals_t(maps: UvGeometryMaps, raw: Tensor) -> tuple:
    """Differentiable refined (position, normal) maps as (3,R,R) tensors.

    Seam and border texels keep the coarse normal (no gradient there), matching
    the numpy path bit-for-bit up to float op ordering.
    """
    pos_c = Tensor(maps.position.transpose(2, 0, 1).copy())
    nrm_c = Tensor(maps.normal.transpose(2, 0, 1).copy())
    validf = maps.valid.astype(np.float32)[None]

    delta = displacement_from_raw_t(raw)
    delta = T.mul(delta, Tensor(validf))
    xhat = T.add(pos_c, T.mul(delta, nrm_c))

    tu = T.scale(T.sub(T.shift2d(xhat, 0, -1), T.shift2d(xhat, 0, 1)), 0.5)
    tv = T.scale(T.sub(T.shift2d(xhat, -1, 0), T.shift2d(xhat, 1, 0)), 0.5)
    n = T.cross3(tu, tv)

    sign = np.sign(np.sum(n.data.transpose(1, 2, 0) * maps.normal, axis=-1))
    sign[sign == 0] = 1.0
    n = T.mul(n, Tensor(sign[None].astype(np.float32)))
    ln = T.sqrt(T.add_scalar(T.tsum(T.mul(n, n), axis=0, keepdims=True), 1e-12))
    unit = T.div(n, ln)

    ok = (interior_mask(maps.valid)
          & (np.linalg.norm(n.data, axis=0) > 1e-9)).astype(np.float32)[None]
    nrm = T.add(T.mul(unit, Tensor(ok)), T.mul(nrm_c, Tensor(1.0 - ok)))
    xhat = T.mul(xhat, Tensor(validf))
    return xhat, nrm
