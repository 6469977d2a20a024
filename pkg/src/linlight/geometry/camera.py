"""Pinhole camera and the two-stage rasterizer.

Stage one (non-differentiable) projects the posed mesh, z-buffers triangles
at pixel centers, and bakes a bilinear texture-sampling plan (4 texel taps +
weights per covered pixel) from perspective-correct UVs.  Stage two gathers
any texel-space map through that plan; it is linear in the texel values, so
gradients flow to the texture and the whole rendering stays linear in light.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..tensor import Tensor, _make, _accum


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: np.ndarray      # (4,4) world -> camera
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("camera: focal length must be positive")
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)

    @staticmethod
    def look_at(eye, target, up=(0.0, 1.0, 0.0), fov_deg: float = 40.0,
                width: int = 256, height: int = 256) -> "Camera":
        eye = np.asarray(eye, np.float64)
        fwd = np.asarray(target, np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])          # world -> cam rows
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ eye
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) * 0.5)
        return Camera(f, f, width * 0.5, height * 0.5, ext, width, height)

    def center(self) -> np.ndarray:
        rot = self.extrinsic[:3, :3]
        return (-rot.T @ self.extrinsic[:3, 3]).astype(np.float32)

    def project(self, pts: np.ndarray):
        p = pts.astype(np.float64) @ self.extrinsic[:3, :3].T + self.extrinsic[:3, 3]
        z = p[:, 2]
        safe = np.where(np.abs(z) > 1e-9, z, 1e-9)
        u = self.fx * p[:, 0] / safe + self.cx
        v = self.fy * p[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1).astype(np.float32), z.astype(np.float32)

    def to_text(self) -> str:
        ext = " ".join(f"{v:.9g}" for v in self.extrinsic.reshape(-1))
        return (f"fx {self.fx}\nfy {self.fy}\ncx {self.cx}\ncy {self.cy}\n"
                f"size {self.width} {self.height}\nextrinsic {ext}\n")

    @staticmethod
    def from_text(text: str) -> "Camera":
        kv = {}
        for line in text.splitlines():
            parts = line.split()
            if parts:
                kv[parts[0]] = parts[1:]
        ext = np.array([float(x) for x in kv["extrinsic"]]).reshape(4, 4)
        return Camera(float(kv["fx"][0]), float(kv["fy"][0]), float(kv["cx"][0]),
                      float(kv["cy"][0]), ext, int(kv["size"][0]), int(kv["size"][1]))


@dataclass
class RasterMap:
    """Per-frame sampling plan from texture space to a camera image."""

    coverage: np.ndarray     # (H,W) bool
    pix_index: np.ndarray    # (P,) flat pixel indices into H*W
    texel_index: np.ndarray  # (P,4) flat texel indices into R*R
    texel_weight: np.ndarray  # (P,4) bilinear weights
    frac_x: np.ndarray       # (P,) bilinear fractions (lerp-form forward)
    frac_y: np.ndarray
    depth: np.ndarray        # (H,W) float32, inf outside coverage
    tri_id: np.ndarray       # (H,W) int32, -1 outside
    resolution: int
    height: int
    width: int


def rasterize_geometry(vertices: np.ndarray, faces: np.ndarray, uv: np.ndarray,
                       cam: Camera, resolution: int) -> RasterMap:
    pix, z = cam.project(vertices)
    tri_id, bary, depth, _ = kernels.raster_core(
        pix, z, faces, cam.height, cam.width, True)
    cover = tri_id >= 0
    pidx = np.flatnonzero(cover.reshape(-1))
    tid = tri_id.reshape(-1)[pidx]
    bw = bary.reshape(3, -1)[:, pidx]                       # (3,P)

    # perspective-correct uv: interpolate uv/z and 1/z in screen space
    iz = 1.0 / np.maximum(z.astype(np.float64), 1e-9)
    num_u = np.zeros(pidx.size)
    num_v = np.zeros(pidx.size)
    den = np.zeros(pidx.size)
    for k in range(3):
        vid = faces[tid, k]
        num_u += bw[k] * uv[vid, 0] * iz[vid]
        num_v += bw[k] * uv[vid, 1] * iz[vid]
        den += bw[k] * iz[vid]
    u = num_u / np.maximum(den, 1e-12)
    v = num_v / np.maximum(den, 1e-12)

    r = int(resolution)
    su = u * r - 0.5
    sv = v * r - 0.5
    ix0 = np.floor(su).astype(np.int64)
    iy0 = np.floor(sv).astype(np.int64)
    fx = (su - ix0).astype(np.float32)
    fy = (sv - iy0).astype(np.float32)
    ix0c = np.clip(ix0, 0, r - 1)
    ix1c = np.clip(ix0 + 1, 0, r - 1)
    iy0c = np.clip(iy0, 0, r - 1)
    iy1c = np.clip(iy0 + 1, 0, r - 1)
    tidx = np.stack([iy0c * r + ix0c, iy0c * r + ix1c,
                     iy1c * r + ix0c, iy1c * r + ix1c], axis=1)
    wgt = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx,
                    fy * (1 - fx), fy * fx], axis=1).astype(np.float32)
    return RasterMap(cover, pidx, np.ascontiguousarray(tidx),
                     np.ascontiguousarray(wgt), fx, fy, depth, tri_id, r,
                     cam.height, cam.width)


def sample_texture_np(rmap: RasterMap, texture: np.ndarray) -> np.ndarray:
    """(C,R,R) texel map -> (C,H,W) image, numpy fast path.

    Lerp-form bilinear so constant textures reproduce exactly.
    """
    c = texture.shape[0]
    flat = texture.reshape(c, -1)
    t00 = flat[:, rmap.texel_index[:, 0]]
    t01 = flat[:, rmap.texel_index[:, 1]]
    t10 = flat[:, rmap.texel_index[:, 2]]
    t11 = flat[:, rmap.texel_index[:, 3]]
    fx = rmap.frac_x[None]
    fy = rmap.frac_y[None]
    top = t00 + fx * (t01 - t00)
    bot = t10 + fx * (t11 - t10)
    vals = top + fy * (bot - top)
    img = np.zeros((c, rmap.height * rmap.width), np.float32)
    img[:, rmap.pix_index] = vals
    return img.reshape(c, rmap.height, rmap.width)


def sample_texture(rmap: RasterMap, texture: Tensor) -> Tensor:
    """Differentiable gather through the sampling plan (linear in texels)."""
    data = sample_texture_np(rmap, texture.data)

    def bw(g):
        if not texture.requires_grad:
            return
        c = texture.data.shape[0]
        gpix = np.ascontiguousarray(g.reshape(c, -1)[:, rmap.pix_index])
        gtex = np.zeros((c, rmap.resolution * rmap.resolution), np.float32)
        kernels.scatter_tex(gtex, rmap.texel_index, rmap.texel_weight, gpix)
        _accum(texture, gtex.reshape(texture.data.shape))
    return _make(data, (texture,), bw, "sample_texture")


def unwrap_image(rmap: RasterMap, maps_position: np.ndarray, valid: np.ndarray,
                 cam: Camera, image: np.ndarray, depth_tol: float = 1.0):
    """Pull a camera image back into UV space (texel-aligned colors).

    For each valid texel, project its world position; if the rasterized depth
    there matches (within depth_tol mm), bilinearly sample the image.
    Returns (colors (R,R,3), seen (R,R) bool).
    """
    r = valid.shape[0]
    seen = np.zeros((r, r), bool)
    colors = np.zeros((r, r, 3), np.float32)
    pts = maps_position[valid]
    pix, z = cam.project(pts)
    u, v = pix[:, 0], pix[:, 1]
    inside = (u >= 0.5) & (u < cam.width - 0.5) & (v >= 0.5) & (v < cam.height - 0.5) & (z > 0)
    ix0 = np.floor(u - 0.5).astype(np.int64)
    iy0 = np.floor(v - 0.5).astype(np.int64)
    fx = (u - 0.5 - ix0).astype(np.float32)
    fy = (v - 0.5 - iy0).astype(np.float32)
    ix0 = np.clip(ix0, 0, cam.width - 2)
    iy0 = np.clip(iy0, 0, cam.height - 2)
    dnear = rmap.depth[iy0, ix0]
    ok = inside & (np.abs(dnear - z) < depth_tol)
    img = image.astype(np.float32)
    c00 = img[iy0, ix0]
    c01 = img[iy0, ix0 + 1]
    c10 = img[iy0 + 1, ix0]
    c11 = img[iy0 + 1, ix0 + 1]
    col = ((1 - fy) * (1 - fx))[:, None] * c00 + ((1 - fy) * fx)[:, None] * c01 \
        + (fy * (1 - fx))[:, None] * c10 + (fy * fx)[:, None] * c11
    flat_idx = np.flatnonzero(valid.reshape(-1))
    seen.reshape(-1)[flat_idx[ok]] = True
    colors.reshape(-1, 3)[flat_idx[ok]] = col[ok]
    return colors, seen
