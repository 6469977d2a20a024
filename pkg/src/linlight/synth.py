"""Synthetic stand-in for a light-stage capture.

Identities are procedural texture/material sets over a shared articulated
rig.  The ground-truth oracle renders the same microfacet model as the
physical branch using the true material maps, PLUS a wrap-diffuse term (a
cheap subsurface surrogate) that the parametric model cannot represent:
exactly the transport gap the neural branch has to close.  The oracle is
strictly linear in light intensities by construction.

Dataset protocol: per (identity, pose, camera) one fully lit frame (all rig
lights at reduced intensity) interleaved 1:1 with one partially lit frame
(a random group of 5 distinct lights).  The mean texture per identity is
the average of its unwrapped (texel-space) fully lit renders.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import geometry as G
from . import shading as S
from .imgio import read_pfm, write_pfm

WRAP = 0.5                   # wrap-diffuse parameter of the oracle
N_RIG_LIGHTS = 350
GROUP_SIZE = 5
FULL_LIGHT_TOTAL = 2.8       # summed intensity of the fully lit condition
PARTIAL_LIGHT_EACH = 0.5


# ---------------------------------------------------------------------------
# procedural identities
# ---------------------------------------------------------------------------

def value_noise(rng: np.random.Generator, r: int, cells=(4, 8, 16, 32),
                amps=(1.0, 0.55, 0.3, 0.15)) -> np.ndarray:
    """Multi-octave bilinear value noise, normalized to [0,1]."""
    out = np.zeros((r, r), np.float64)
    for n, a in zip(cells, amps):
        grid = rng.standard_normal((n + 1, n + 1))
        xs = np.linspace(0, n, r, endpoint=False)
        i0 = np.floor(xs).astype(np.int64)
        f = xs - i0
        g0 = grid[i0][:, i0]
        g1 = grid[i0][:, i0 + 1]
        g2 = grid[i0 + 1][:, i0]
        g3 = grid[i0 + 1][:, i0 + 1]
        fx = f[None, :]
        fy = f[:, None]
        layer = (g0 * (1 - fx) * (1 - fy) + g1 * fx * (1 - fy)
                 + g2 * (1 - fx) * fy + g3 * fx * fy)
        out += a * layer
    out -= out.min()
    peak = out.max()
    return (out / peak if peak > 0 else out).astype(np.float32)


@dataclass
class SyntheticIdentity:
    albedo: np.ndarray            # (R,R,3) linear RGB
    beta_star: np.ndarray         # (R,R) in [0.05, 0.9]
    displacement_star: np.ndarray  # (R,R) mm, |.| < 3
    subsurface: float             # wrap-diffuse strength in [0, 0.5]

    def validate(self):
        if self.beta_star.min() < 0.05 or self.beta_star.max() > 0.9:
            raise ValueError("beta_star outside [0.05, 0.9]")
        if np.abs(self.displacement_star).max() >= 3.0:
            raise ValueError("displacement_star must stay below 3 mm")
        if not (0.0 <= self.subsurface <= 0.5):
            raise ValueError("subsurface strength outside [0, 0.5]")


def make_identity(seed: int, resolution: int,
                  subsurface: Optional[float] = None) -> SyntheticIdentity:
    rng = np.random.default_rng(seed)
    base = value_noise(rng, resolution)
    bands = 0.5 + 0.5 * np.sin(
        2 * np.pi * (np.arange(resolution) + 0.5) / resolution * 24
        + 4.0 * value_noise(rng, resolution))
    veins = value_noise(rng, resolution, cells=(8, 16), amps=(1.0, 0.5))

    tone = np.array([0.72, 0.47, 0.36], np.float32)
    albedo = tone[None, None, :] * (0.65 + 0.45 * base[..., None])
    albedo *= (0.92 + 0.08 * bands)[..., None]
    vein_mask = (veins > 0.72).astype(np.float32) * 0.12
    albedo *= (1.0 - vein_mask[..., None] * np.array([0.25, 0.1, -0.1]))
    albedo = np.clip(albedo, 0.02, 1.0).astype(np.float32)

    beta = np.clip(0.2 + 0.55 * value_noise(rng, resolution), 0.05, 0.9)
    disp = (1.6 * (2.0 * value_noise(rng, resolution) - 1.0)).astype(np.float32)
    s = float(rng.uniform(0.1, 0.5)) if subsurface is None else float(subsurface)
    ident = SyntheticIdentity(albedo, beta.astype(np.float32), disp, s)
    ident.validate()
    return ident


# ---------------------------------------------------------------------------
# the oracle renderer
# ---------------------------------------------------------------------------

def wrap_diffuse_points(normals: np.ndarray, lights: S.LightSet,
                        vis: np.ndarray, wrap: float = WRAP) -> np.ndarray:
    """Subsurface surrogate: light wraps past the horizon by ``wrap``."""
    cos = normals.astype(np.float64) @ lights.directions.T.astype(np.float64)
    term = np.maximum((cos + wrap) / (1.0 + wrap), 0.0)
    return ((term * vis) @ lights.intensities.astype(np.float64)).astype(np.float32)


def blur3(tex: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """9-texel (3x3 binomial) blur restricted to the validity mask."""
    k = np.array([1.0, 2.0, 1.0])
    w = valid.astype(np.float64)
    num = tex.astype(np.float64) * w[..., None]
    for axis in (0, 1):
        num = sum(np.roll(num, s, axis=axis) * k[i]
                  for i, s in enumerate((-1, 0, 1))) / 4.0
        w = sum(np.roll(w, s, axis=axis) * k[i]
                for i, s in enumerate((-1, 0, 1))) / 4.0
    out = np.where(w[..., None] > 1e-9, num / np.maximum(w[..., None], 1e-9), 0.0)
    return (out * valid[..., None]).astype(np.float32)


@dataclass
class OracleScene:
    """Everything needed to render one (identity, pose, camera) frame."""

    rig: G.HandRig
    identity: SyntheticIdentity
    pose: G.Pose
    camera: G.Camera
    resolution: int

    def __post_init__(self):
        self.posed = G.skin(self.rig, self.pose)
        coarse = G.unwrap(self.rig, self.posed, self.resolution)
        raw = _raw_from_displacement(self.identity.displacement_star)
        self.maps_coarse = coarse
        self.maps = G.apply_displacement(coarse, raw)
        self.occluder = G.MeshOccluder(self.posed, self.rig.faces)
        self.albedo_blur = blur3(self.identity.albedo, coarse.valid)

    def visibility(self, lights: S.LightSet) -> np.ndarray:
        pts = self.maps_coarse.position[self.maps_coarse.valid]
        nrm = self.maps_coarse.normal[self.maps_coarse.valid]
        return self.occluder.visibility_matrix(pts, nrm, lights.directions)


def _raw_from_displacement(disp: np.ndarray) -> np.ndarray:
    """Invert the bounded activation so apply_displacement reproduces disp."""
    span = G.DISPLACEMENT_RANGE_MM
    s = np.clip((disp.astype(np.float64) / span + 1.0) / 2.0, 1e-9, 1 - 1e-9)
    return np.log(s / (1.0 - s)).astype(np.float32)


def oracle_texture(scene: OracleScene, lights: S.LightSet,
                   vis: Optional[np.ndarray] = None,
                   include_subsurface: bool = True) -> np.ndarray:
    """Texel-space ground-truth render (R,R,3).

    include_subsurface=False gives the physical render with oracle-true
    materials (the representable part of the transport).
    """
    maps = scene.maps
    valid = maps.valid
    if vis is None:
        vis = scene.visibility(lights)
    vis = vis.astype(np.float64)
    n = maps.normal[valid]
    pos = scene.maps_coarse.position[valid]
    d = scene.camera.center()[None, :] - pos
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-9)

    cd = S.diffuse_points(n, lights, vis)
    cs = S.specular_points(n, d, scene.identity.beta_star[valid], lights, vis)
    out = np.zeros((scene.resolution, scene.resolution, 3), np.float32)
    out[valid] = cd * scene.identity.albedo[valid] + cs
    if include_subsurface and scene.identity.subsurface > 0.0:
        wrapped = wrap_diffuse_points(n, lights, vis)
        out[valid] += (np.float32(scene.identity.subsurface)
                       * wrapped * scene.albedo_blur[valid])
    return out


def oracle_render(scene: OracleScene, lights: S.LightSet,
                  vis: Optional[np.ndarray] = None,
                  include_subsurface: bool = True):
    """Camera-space ground-truth (image (H,W,3), mask (H,W))."""
    tex = oracle_texture(scene, lights, vis, include_subsurface)
    rmap = G.rasterize_geometry(scene.posed, scene.rig.faces, scene.rig.uv,
                                scene.camera, scene.resolution)
    img = G.sample_texture_np(rmap, tex.transpose(2, 0, 1).copy())
    return img.transpose(1, 2, 0), rmap.coverage


# ---------------------------------------------------------------------------
# dataset emission
# ---------------------------------------------------------------------------

def sample_poses(rng: np.random.Generator, rig: G.HandRig,
                 n_poses: int) -> List[G.Pose]:
    """Rest pose first, then random articulations (finger curls + spreads)."""
    poses = [G.Pose.rest(rig.n_joints)]
    for _ in range(n_poses - 1):
        ang = np.zeros((rig.n_joints, 3))
        for f in range(5):
            curl = rng.uniform(0.0, 0.9)
            for s in range(3):
                j = 1 + f * 3 + s
                ang[j, 0] = -(curl * rng.uniform(0.7, 1.3))
            ang[1 + f * 3, 2] = rng.uniform(-0.15, 0.15)
        poses.append(G.Pose(ang))
    return poses


def ring_cameras(n_cams: int, width: int, height: int,
                 radius: float = 420.0) -> List[G.Camera]:
    cams = []
    for i in range(n_cams):
        ang = 2 * np.pi * i / max(n_cams, 1)
        # stay off the palm plane so fingers and back are both seen
        eye = (radius * np.sin(ang), 40.0 + 30.0 * np.cos(2 * ang),
               radius * np.cos(ang))
        cams.append(G.Camera.look_at(eye, (0.0, 10.0, 0.0), up=(0, 1, 0),
                                     fov_deg=32.0, width=width, height=height))
    return cams


def make_dataset(out_dir, n_identities: int, n_poses: int, n_cameras: int,
                 resolution: int = 128, image_size: int = 160, seed: int = 0,
                 n_rig_lights: int = N_RIG_LIGHTS, group_size: int = GROUP_SIZE,
                 subsurface: Optional[float] = None,
                 progress: bool = False) -> Path:
    """Emit the synthetic dataset; returns the dataset root."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rig = G.make_hand_rig()
    G.save_obj(out / "rig.obj", rig)
    rig_lights = S.fibonacci_sphere_lights(n_rig_lights, 1.0)
    full_lights = rig_lights.scaled(FULL_LIGHT_TOTAL / n_rig_lights)
    poses = sample_poses(rng, rig, n_poses)
    cams = ring_cameras(n_cameras, image_size, image_size)

    rows = []
    for idx in range(n_identities):
        ident_name = f"id{idx:02d}"
        ident_dir = out / ident_name
        ident_dir.mkdir(exist_ok=True)
        ident = make_identity(seed * 1000 + idx, resolution, subsurface)
        write_pfm(ident_dir / "gt_albedo.pfm", ident.albedo)
        write_pfm(ident_dir / "gt_beta.pfm", ident.beta_star)
        write_pfm(ident_dir / "gt_displacement.pfm", ident.displacement_star)
        (ident_dir / "gt_subsurface.txt").write_text(f"{ident.subsurface}\n")

        mean_acc = np.zeros((resolution, resolution, 3), np.float64)
        n_full = 0
        for pose_id, pose in enumerate(poses):
            split = "holdout" if pose_id == n_poses - 1 and n_poses > 1 else "train"
            scene = OracleScene(rig, ident, pose, cams[0], resolution)
            vis_full = scene.visibility(rig_lights)
            if progress:
                print(f"[gen-data] {ident_name} pose {pose_id} "
                      f"({scene.maps.valid.sum()} texels)")
            for cam_id, cam in enumerate(cams):
                scene.camera = cam
                base = f"p{pose_id:02d}_c{cam_id:02d}"
                # fully lit
                tex_full = oracle_texture(scene, full_lights, vis_full)
                img, mask = _render_tex(scene, tex_full)
                write_pfm(ident_dir / f"{base}_full.pfm", img)
                full_lights.save(ident_dir / f"{base}_full.lights.txt")
                mean_acc += tex_full.astype(np.float64)
                n_full += 1
                # partially lit
                group = rng.choice(n_rig_lights, size=group_size, replace=False)
                part_lights = rig_lights.subset(np.sort(group)).scaled(PARTIAL_LIGHT_EACH)
                tex_part = oracle_texture(scene, part_lights,
                                          vis_full[:, np.sort(group)])
                img_p, _ = _render_tex(scene, tex_part)
                write_pfm(ident_dir / f"{base}_part.pfm", img_p)
                part_lights.save(ident_dir / f"{base}_part.lights.txt")
                for kind, name in (("full", f"{base}_full"), ("part", f"{base}_part")):
                    rows.append({
                        "identity": ident_name, "frame": name, "kind": kind,
                        "pose_id": pose_id, "cam_id": cam_id, "split": split,
                    })
                (ident_dir / f"{base}.pose.txt").write_text(_pose_text(pose))
                (ident_dir / f"{base}.cam.txt").write_text(cam.to_text())
        write_pfm(ident_dir / "mean_texture.pfm",
                  (mean_acc / max(n_full, 1)).astype(np.float32))

    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["identity", "frame", "kind",
                                                "pose_id", "cam_id", "split"])
        writer.writeheader()
        writer.writerows(rows)
    (out / "meta.txt").write_text(
        f"resolution={resolution}\nimage_size={image_size}\n"
        f"n_identities={n_identities}\nn_poses={n_poses}\nn_cameras={n_cameras}\n"
        f"n_rig_lights={n_rig_lights}\ngroup_size={group_size}\nseed={seed}\n")
    return out


def _render_tex(scene: OracleScene, tex: np.ndarray):
    rmap = G.rasterize_geometry(scene.posed, scene.rig.faces, scene.rig.uv,
                                scene.camera, scene.resolution)
    img = G.sample_texture_np(rmap, np.ascontiguousarray(tex.transpose(2, 0, 1)))
    return img.transpose(1, 2, 0), rmap.coverage


def _pose_text(pose: G.Pose) -> str:
    ang = " ".join(f"{v:.9g}" for v in pose.joint_angles.reshape(-1))
    glob = " ".join(f"{v:.9g}" for v in pose.global_transform.reshape(-1))
    return f"angles {ang}\nglobal {glob}\n"


def pose_from_text(text: str, n_joints: int) -> G.Pose:
    kv = {}
    for line in text.splitlines():
        parts = line.split()
        if parts:
            kv[parts[0]] = [float(x) for x in parts[1:]]
    ang = np.array(kv["angles"]).reshape(n_joints, 3)
    glob = np.array(kv["global"]).reshape(4, 4)
    return G.Pose(ang, glob)


# ---------------------------------------------------------------------------
# dataset reading
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    root: Path
    meta: Dict[str, str]
    rows: List[dict]
    rig: G.HandRig

    @property
    def resolution(self) -> int:
        return int(self.meta["resolution"])

    def identities(self) -> List[str]:
        return sorted({r["identity"] for r in self.rows})

    def frames(self, kind: Optional[str] = None, split: Optional[str] = None,
               identity: Optional[str] = None) -> List[dict]:
        out = []
        for r in self.rows:
            if kind and r["kind"] != kind:
                continue
            if split and r["split"] != split:
                continue
            if identity and r["identity"] != identity:
                continue
            out.append(r)
        return out

    def mean_texture(self, identity: str) -> np.ndarray:
        return read_pfm(self.root / identity / "mean_texture.pfm")

    def frame_paths(self, row: dict) -> Dict[str, Path]:
        d = self.root / row["identity"]
        base = f"p{int(row['pose_id']):02d}_c{int(row['cam_id']):02d}"
        return {
            "image": d / f"{row['frame']}.pfm",
            "lights": d / f"{row['frame']}.lights.txt",
            "pose": d / f"{base}.pose.txt",
            "cam": d / f"{base}.cam.txt",
        }

    def load_frame(self, row: dict):
        paths = self.frame_paths(row)
        image = read_pfm(paths["image"])
        lights = S.LightSet.load(paths["lights"])
        pose = pose_from_text(paths["pose"].read_text(), self.rig.n_joints)
        cam = G.Camera.from_text(paths["cam"].read_text())
        return image, lights, pose, cam

    def identity_gt(self, identity: str) -> SyntheticIdentity:
        d = self.root / identity
        return SyntheticIdentity(
            read_pfm(d / "gt_albedo.pfm"),
            read_pfm(d / "gt_beta.pfm"),
            read_pfm(d / "gt_displacement.pfm"),
            float((d / "gt_subsurface.txt").read_text().strip()),
        )


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta: Dict[str, str] = {}
    for line in (root / "meta.txt").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k] = v
    with open(root / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    rig = G.load_obj(root / "rig.obj")
    return Dataset(root, meta, rows, rig)
