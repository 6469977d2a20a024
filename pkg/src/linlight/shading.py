"""Physically based shading features in texel space.

The microfacet model (GGX distribution, Schlick-style Fresnel with the
power-of-two exponent fit, Smith-style visibility with K = (beta+1)^2/8)
produces texel-aligned diffuse and specular feature maps under a set of
directional lights.  Everything is linear in the light intensities; the
integral over incident directions is realized as a discrete sum over the
light set (far-field only).

Two evaluation paths exist: a vectorized numpy path (data generation,
inference, oracles) and a tensor-op twin that differentiates w.r.t. the
refined normals and the roughness map during training.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

F0 = 0.04
LAMBDA_F1 = -5.55473
LAMBDA_F2 = -6.98316
BETA_MIN = 0.02
BETA_MAX = 1.0
PHONG_EXPONENT = 32.0

_LIGHT_CHUNK = 64


# ---------------------------------------------------------------------------
# light sets and environment maps
# ---------------------------------------------------------------------------

@dataclass
class LightSet:
    directions: np.ndarray    # (L,3) unit vectors, pointing toward the light
    intensities: np.ndarray   # (L,3) nonnegative RGB

    def __post_init__(self):
        self.directions = np.asarray(self.directions, np.float32).reshape(-1, 3)
        self.intensities = np.asarray(self.intensities, np.float32).reshape(-1, 3)
        if self.directions.shape[0] != self.intensities.shape[0]:
            raise ValueError("light set: directions/intensities length mismatch")
        norms = np.linalg.norm(self.directions.astype(np.float64), axis=1)
        if norms.size and np.abs(norms - 1.0).max() > 1e-5:
            raise ValueError("light set: directions must be unit length")
        if not np.all(np.isfinite(self.intensities)) or self.intensities.min() < 0:
            raise ValueError("light set: intensities must be finite and >= 0")

    def __len__(self) -> int:
        return self.directions.shape[0]

    def scaled(self, factor: float) -> "LightSet":
        return LightSet(self.directions, self.intensities * np.float32(factor))

    def union(self, other: "LightSet") -> "LightSet":
        return LightSet(np.concatenate([self.directions, other.directions]),
                        np.concatenate([self.intensities, other.intensities]))

    def subset(self, idx) -> "LightSet":
        return LightSet(self.directions[idx], self.intensities[idx])

    def to_text(self) -> str:
        lines = []
        for d, c in zip(self.directions, self.intensities):
            lines.append(f"{d[0]:.9g} {d[1]:.9g} {d[2]:.9g} "
                         f"{c[0]:.9g} {c[1]:.9g} {c[2]:.9g}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "LightSet":
        rows = [[float(x) for x in line.split()]
                for line in text.splitlines() if line.strip()]
        arr = np.asarray(rows, np.float32).reshape(-1, 6)
        return LightSet(arr[:, :3], arr[:, 3:])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @staticmethod
    def load(path) -> "LightSet":
        return LightSet.from_text(Path(path).read_text())


def fibonacci_sphere_lights(count: int, intensity=1.0) -> LightSet:
    """Evenly spread directional rig (the virtual light-stage dome)."""
    i = np.arange(count, dtype=np.float64)
    golden = (1 + 5 ** 0.5) / 2
    z = 1 - (2 * i + 1) / count
    phi = 2 * np.pi * i / golden
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    dirs = np.stack([r * np.cos(phi), z, r * np.sin(phi)], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    inten = np.full((count, 3), intensity, np.float32)
    return LightSet(dirs.astype(np.float32), inten)


@dataclass
class EnvironmentMap:
    """Equirectangular radiance grid, +y up; row 0 is the +y pole."""

    radiance: np.ndarray     # (H,W,3) linear RGB

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, np.float32)
        if self.radiance.ndim != 3 or self.radiance.shape[2] != 3:
            raise ValueError("environment map must be (H,W,3)")
        if not np.all(np.isfinite(self.radiance)) or self.radiance.min() < 0:
            raise ValueError("environment map must be finite and nonnegative")

    @property
    def shape(self):
        return self.radiance.shape[:2]

    def pixel_directions(self):
        h, w = self.shape
        theta = np.pi * (np.arange(h) + 0.5) / h          # from +y pole
        phi = 2 * np.pi * (np.arange(w) + 0.5) / w
        st, ct = np.sin(theta), np.cos(theta)
        dirs = np.zeros((h, w, 3), np.float64)
        dirs[..., 0] = st[:, None] * np.cos(phi)[None, :]
        dirs[..., 1] = ct[:, None]
        dirs[..., 2] = st[:, None] * np.sin(phi)[None, :]
        return dirs

    def pixel_solid_angles(self):
        h, w = self.shape
        theta = np.pi * (np.arange(h) + 0.5) / h
        return np.broadcast_to(
            (2 * np.pi / w) * (np.pi / h) * np.sin(theta)[:, None], (h, w)).copy()


def uniform_env(h: int = 16, w: int = 32, value=1.0) -> EnvironmentMap:
    return EnvironmentMap(np.full((h, w, 3), value, np.float32))


def env_to_lights(env: EnvironmentMap, n: int) -> LightSet:
    """Reduce an environment map to n directional lights.

    The sphere is partitioned into near-equal-area bins: rows uniform in
    z = cos(theta) (equal area per row band), each row split uniformly in
    azimuth.  Light direction = bin centroid, intensity = mean radiance in
    the bin times the bin's solid angle, so a uniform unit env sums to 4*pi
    exactly and a single lit pixel produces exactly one light.
    """
    if n < 1:
        raise ValueError("env_to_lights: n must be >= 1")
    n_rows = max(1, int(round(np.sqrt(n / 2.0))))
    base = n // n_rows
    extra = n - base * n_rows
    cols_per_row = [base + (1 if i < extra else 0) for i in range(n_rows)]

    h, w = env.shape
    dirs_px = env.pixel_directions().reshape(-1, 3)
    omega_px = env.pixel_solid_angles().reshape(-1)
    rad_px = env.radiance.reshape(-1, 3).astype(np.float64)

    # assign each pixel to a bin
    z = np.clip(dirs_px[:, 1], -1.0, 1.0)
    row = np.minimum(((1.0 - z) / 2.0 * n_rows).astype(np.int64), n_rows - 1)
    phi = np.mod(np.arctan2(dirs_px[:, 2], dirs_px[:, 0]), 2 * np.pi)

    directions = np.zeros((n, 3), np.float64)
    intensities = np.zeros((n, 3), np.float64)
    bin_id = 0
    for i, cols in enumerate(cols_per_row):
        z_hi = 1.0 - 2.0 * i / n_rows
        z_lo = 1.0 - 2.0 * (i + 1) / n_rows
        z_c = 0.5 * (z_hi + z_lo)
        band_omega = 2 * np.pi * (z_hi - z_lo)
        in_row = row == i
        col = np.minimum((phi / (2 * np.pi) * cols).astype(np.int64), cols - 1)
        for j in range(cols):
            sel = in_row & (col == j)
            phi_c = 2 * np.pi * (j + 0.5) / cols
            r_c = np.sqrt(max(0.0, 1.0 - z_c * z_c))
            d = np.array([r_c * np.cos(phi_c), z_c, r_c * np.sin(phi_c)])
            directions[bin_id] = d / np.linalg.norm(d)
            omega_bin = band_omega / cols
            wsum = omega_px[sel].sum()
            if wsum > 0:
                mean_rad = (rad_px[sel] * omega_px[sel, None]).sum(axis=0) / wsum
            else:
                # no pixel center fell in the bin: point-sample the centroid
                mean_rad = _sample_env(env, directions[bin_id])
            intensities[bin_id] = mean_rad * omega_bin
            bin_id += 1
    return LightSet(directions.astype(np.float32), intensities.astype(np.float32))


def _sample_env(env: EnvironmentMap, d: np.ndarray) -> np.ndarray:
    h, w = env.shape
    theta = np.arccos(np.clip(d[1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[2], d[0]), 2 * np.pi)
    iy = min(int(theta / np.pi * h), h - 1)
    ix = min(int(phi / (2 * np.pi) * w), w - 1)
    return env.radiance[iy, ix].astype(np.float64)


def lights_to_env(lights: LightSet, h: int = 16, w: int = 32) -> EnvironmentMap:
    """Splat directional lights into an equirectangular grid (the holistic
    representation consumed by the mlp-linear ablation)."""
    grid = np.zeros((h, w, 3), np.float64)
    omega = (2 * np.pi / w) * (np.pi / h)
    for d, c in zip(lights.directions.astype(np.float64), lights.intensities):
        theta = np.arccos(np.clip(d[1], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[2], d[0]), 2 * np.pi)
        iy = min(int(theta / np.pi * h), h - 1)
        ix = min(int(phi / (2 * np.pi) * w), w - 1)
        grid[iy, ix] += np.asarray(c, np.float64) / (omega * max(np.sin(theta), 1e-3))
    return EnvironmentMap(grid.astype(np.float32))


# ---------------------------------------------------------------------------
# microfacet terms (scalar/array, straight from the model definition)
# ---------------------------------------------------------------------------

def ggx_D(n_dot_h, beta):
    b4 = np.asarray(beta, np.float64) ** 4
    nh = np.asarray(n_dot_h, np.float64)
    bracket = nh * nh * (b4 - 1.0) + 1.0
    return b4 / (np.pi * bracket * bracket)


def schlick_F(d_dot_h):
    dh = np.asarray(d_dot_h, np.float64)
    return F0 + (1.0 - F0) * np.exp2((LAMBDA_F1 * dh + LAMBDA_F2) * dh)


def smith_G(n_dot_d, n_dot_l, beta):
    k = (np.asarray(beta, np.float64) + 1.0) ** 2 / 8.0
    t1 = np.asarray(n_dot_d, np.float64) * (1.0 - k) + k
    t2 = np.asarray(n_dot_l, np.float64) * (1.0 - k) + k
    return 1.0 / (4.0 * t1 * t2)


def clamp_beta(beta):
    return np.clip(beta, BETA_MIN, BETA_MAX)


# ---------------------------------------------------------------------------
# numpy feature path (vectorized over texels x lights, chunked over lights)
# ---------------------------------------------------------------------------

def diffuse_points(normals: np.ndarray, lights: LightSet,
                   vis: np.ndarray) -> np.ndarray:
    """Clamped-cosine sum with visibility: (P,3)."""
    cos = np.maximum(normals.astype(np.float64) @ lights.directions.T.astype(np.float64), 0.0)
    return ((cos * vis) @ lights.intensities.astype(np.float64)).astype(np.float32)


def specular_points(normals: np.ndarray, view_dirs: np.ndarray, beta: np.ndarray,
                    lights: LightSet, vis: np.ndarray) -> np.ndarray:
    """Microfacet specular sum with visibility: (P,3).

    Backfacing texels (n.d <= 0) are zero.  beta is clamped to
    [BETA_MIN, BETA_MAX] before evaluation.
    """
    n = normals.astype(np.float64)
    d = view_dirs.astype(np.float64)
    b = clamp_beta(beta).astype(np.float64).reshape(-1, 1)
    nd = np.sum(n * d, axis=1, keepdims=True)
    front = nd > 0.0
    out = np.zeros((n.shape[0], 3), np.float64)
    ldirs = lights.directions.astype(np.float64)
    linten = lights.intensities.astype(np.float64)
    k = (b + 1.0) ** 2 / 8.0
    b4 = b ** 4
    # clamped n.d keeps the G denominator >= k (backfacing is masked anyway)
    td = np.maximum(nd, 0.0) * (1.0 - k) + k
    for s in range(0, len(lights), _LIGHT_CHUNK):
        w = ldirs[s:s + _LIGHT_CHUNK]                # (C,3)
        h = w[None, :, :] + d[:, None, :]            # (P,C,3)
        h /= np.maximum(np.linalg.norm(h, axis=2, keepdims=True), 1e-9)
        nh = np.einsum("pk,pck->pc", n, h)
        dh = np.einsum("pk,pck->pc", d, h)
        nl = np.maximum(n @ w.T, 0.0)
        bracket = nh * nh * (b4 - 1.0) + 1.0
        dterm = b4 / (np.pi * bracket * bracket)
        fterm = F0 + (1.0 - F0) * np.exp2((LAMBDA_F1 * dh + LAMBDA_F2) * dh)
        gterm = 1.0 / (4.0 * td * (nl * (1.0 - k) + k))
        contrib = dterm * fterm * gterm * nl * vis[:, s:s + _LIGHT_CHUNK]
        out += contrib @ linten[s:s + _LIGHT_CHUNK]
    return np.where(front, out, 0.0).astype(np.float32)


def phong_points(normals: np.ndarray, view_dirs: np.ndarray, lights: LightSet,
                 vis: np.ndarray, exponent: float = PHONG_EXPONENT):
    """Conditioning features for the discriminator: (A, S), each (P,3).

    A is the diffuse feature (same code path); S uses the reflected light
    direction against the view with a fixed exponent.
    """
    a = diffuse_points(normals, lights, vis)
    n = normals.astype(np.float64)
    d = view_dirs.astype(np.float64)
    out = np.zeros((n.shape[0], 3), np.float64)
    ldirs = lights.directions.astype(np.float64)
    for s in range(0, len(lights), _LIGHT_CHUNK):
        w = ldirs[s:s + _LIGHT_CHUNK]
        nl = n @ w.T                                   # (P,C)
        r = 2.0 * nl[:, :, None] * n[:, None, :] - w[None, :, :]
        rd = np.maximum(np.einsum("pck,pk->pc", r, d), 0.0)
        out += (rd ** exponent * vis[:, s:s + _LIGHT_CHUNK]) \
            @ lights.intensities[s:s + _LIGHT_CHUNK].astype(np.float64)
    return a, out.astype(np.float32)


def compose_pbr(diffuse: np.ndarray, specular: np.ndarray,
                mean_texture: np.ndarray) -> np.ndarray:
    """C_pb = diffuse * T + specular (elementwise over texels)."""
    return (diffuse * mean_texture + specular).astype(np.float32)


@dataclass
class ShadingFeatures:
    diffuse: np.ndarray    # (R,R,3)
    specular: np.ndarray   # (R,R,3)


def feature_maps(maps, beta_map: np.ndarray, lights: LightSet, cam,
                 vis: np.ndarray) -> ShadingFeatures:
    """Full-map wrapper: evaluates features on valid texels, zero elsewhere.

    View directions run from texel world position to the camera center
    (per-texel view).  ``vis`` is the (P,L) visibility matrix for the valid
    texels in row-major order.
    """
    r = maps.resolution
    valid = maps.valid
    n = maps.normal[valid]
    pos = maps.position[valid]
    d = cam.center()[None, :] - pos
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-9)
    beta = beta_map[valid]
    cd = np.zeros((r, r, 3), np.float32)
    cs = np.zeros((r, r, 3), np.float32)
    cd[valid] = diffuse_points(n, lights, vis)
    cs[valid] = specular_points(n, d, beta, lights, vis)
    return ShadingFeatures(cd, cs)


def view_dir_map(maps, cam) -> np.ndarray:
    """(R,R,3) unit directions from texel positions to the camera center."""
    r = maps.resolution
    out = np.zeros((r, r, 3), np.float32)
    pos = maps.position[maps.valid]
    d = cam.center()[None, :] - pos
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-9)
    out[maps.valid] = d
    return out


# ---------------------------------------------------------------------------
# tensor path (training graph; differentiable w.r.t. normals and roughness)
# ---------------------------------------------------------------------------

def clamp_beta_t(beta: Tensor) -> Tensor:
    """Literal lower clamp at BETA_MIN via relu (upper bound is free after
    sigmoid)."""
    return T.add_scalar(T.relu(T.add_scalar(beta, -BETA_MIN)), BETA_MIN)


def features_t(nrm: Tensor, beta: Tensor, maps, lights: LightSet,
               view_dirs: np.ndarray, vis: np.ndarray):
    """Differentiable (diffuse, specular) maps, each (3,R,R).

    nrm: (3,R,R) refined normals on the graph; beta: (1,R,R) clamped
    roughness on the graph.  view_dirs (R,R,3) and vis (P,L over valid
    texels) are constants w.r.t. the optimization.
    """
    r = maps.resolution
    valid = maps.valid
    validf = valid.astype(np.float32)[None]

    vmap = np.zeros((1, r, r), np.float32)
    dmap = Tensor(np.ascontiguousarray(view_dirs.transpose(2, 0, 1)))
    nd = T.dot_channels(nrm, dmap)
    front = Tensor(((nd.data > 0.0) & valid[None]).astype(np.float32))

    kt = T.scale(T.mul(T.add_scalar(beta, 1.0), T.add_scalar(beta, 1.0)), 0.125)
    one_minus_k = T.add_scalar(T.neg(kt), 1.0)
    b2 = T.mul(beta, beta)
    b4 = T.mul(b2, b2)
    b4m1 = T.add_scalar(b4, -1.0)
    td = T.add(T.mul(T.relu(nd), one_minus_k), kt)

    diffuse = None
    specular = None
    for li in range(len(lights)):
        w = lights.directions[li].astype(np.float32)
        inten = Tensor(lights.intensities[li].reshape(3, 1, 1))
        vmap[:] = 0.0
        vmap[0][valid] = vis[:, li]
        vis_t = Tensor(vmap.copy())

        wmap = Tensor(np.broadcast_to(w[:, None, None], (3, r, r)).copy())
        nl = T.relu(T.dot_channels(nrm, wmap))

        # half vector is light+view, both constant w.r.t. learnables
        h = w[None, None, :] + view_dirs
        h = h / np.maximum(np.linalg.norm(h, axis=2, keepdims=True), 1e-9)
        hmap = Tensor(np.ascontiguousarray(h.transpose(2, 0, 1).astype(np.float32)))
        dh = np.clip((view_dirs * h).sum(axis=2), -1.0, 1.0)
        fconst = (F0 + (1.0 - F0) * np.exp2((LAMBDA_F1 * dh + LAMBDA_F2) * dh))
        fmap = Tensor(fconst[None].astype(np.float32))

        nh = T.dot_channels(nrm, hmap)
        bracket = T.add_scalar(T.mul(T.mul(nh, nh), b4m1), 1.0)
        dterm = T.div(b4, T.scale(T.mul(bracket, bracket), float(np.pi)))
        gdenom = T.scale(T.mul(td, T.add(T.mul(nl, one_minus_k), kt)), 4.0)
        gterm = T.div(Tensor(np.ones((1, r, r), np.float32)), gdenom)

        base = T.mul(T.mul(nl, vis_t), front)
        spec_l = T.mul(T.mul(T.mul(dterm, fmap), gterm), base)
        spec_rgb = T.mul(spec_l, inten)
        diff_rgb = T.mul(T.mul(nl, vis_t), inten)

        specular = spec_rgb if specular is None else T.add(specular, spec_rgb)
        diffuse = diff_rgb if diffuse is None else T.add(diffuse, diff_rgb)

    mask = Tensor(validf)
    return T.mul(diffuse, mask), T.mul(specular, mask)
