"""Articulated rig: template mesh, skeleton, linear blend skinning.

The desk-scale rig is procedural: a palm box plus five three-segment fingers
(16 joints, ~2k vertices) with an analytic non-overlapping UV atlas.  All
lengths are millimeters.  Joint rest transforms are stored relative to the
parent; parents must precede children (parent index < joint index, root 0
has parent -1).
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def euler_to_mat(angles) -> np.ndarray:
    """Rz @ Ry @ Rx for angles (ax, ay, az) in radians."""
    ax, ay, az = (float(a) for a in angles)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return (rz @ ry @ rx).astype(np.float64)


@dataclass
class Pose:
    """Per-joint Euler rotations plus one global rigid transform."""

    joint_angles: np.ndarray                  # (J,3) radians
    global_transform: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.joint_angles = np.asarray(self.joint_angles, dtype=np.float64)
        self.global_transform = np.asarray(self.global_transform, dtype=np.float64)
        if not np.all(np.isfinite(self.joint_angles)):
            raise ValueError("Pose: joint angles must be finite")

    @staticmethod
    def rest(n_joints: int) -> "Pose":
        return Pose(np.zeros((n_joints, 3)))

    def flat(self) -> np.ndarray:
        """Conditioning vector for the networks: joint angles only."""
        return self.joint_angles.reshape(-1).astype(np.float32)


@dataclass
class HandRig:
    vertices: np.ndarray        # (nV,3) float32 mm, rest pose
    faces: np.ndarray           # (nF,3) int32
    uv: np.ndarray              # (nV,2) float32 in [0,1]^2
    joint_parents: np.ndarray   # (J,) int32, parent[0] == -1
    joint_rest_local: np.ndarray  # (J,4,4) float32, relative to parent
    skin_weights: np.ndarray    # (nV,J) float32, rows sum to 1

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float32)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        self.uv = np.asarray(self.uv, dtype=np.float32)
        self.joint_parents = np.asarray(self.joint_parents, dtype=np.int32)
        self.joint_rest_local = np.asarray(self.joint_rest_local, dtype=np.float32)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float32)
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_parents.shape[0]

    def validate(self) -> None:
        n_v = self.n_vertices
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n_v):
            bad = int(self.faces.max())
            raise ValueError(f"rig: face index {bad} out of range (n_vertices={n_v})")
        if self.uv.min() < -1e-6 or self.uv.max() > 1 + 1e-6:
            raise ValueError("rig: UV coordinates must lie in [0,1]^2")
        rows = self.skin_weights.sum(axis=1)
        if self.skin_weights.min() < -1e-7 or np.abs(rows - 1.0).max() > 1e-6:
            raise ValueError("rig: skin weight rows must be nonnegative and sum to 1")
        if self.joint_parents[0] != -1:
            raise ValueError("rig: joint 0 must be the root (parent -1)")
        for j in range(1, self.n_joints):
            if not (0 <= self.joint_parents[j] < j):
                raise ValueError(
                    f"rig: joint {j} parent {self.joint_parents[j]} breaks the tree order")
        if self.skin_weights.shape != (n_v, self.n_joints):
            raise ValueError("rig: skin weight shape mismatch")

    def joint_rest_world(self) -> np.ndarray:
        out = np.zeros((self.n_joints, 4, 4), dtype=np.float64)
        for j in range(self.n_joints):
            local = self.joint_rest_local[j].astype(np.float64)
            p = self.joint_parents[j]
            out[j] = local if p < 0 else out[p] @ local
        return out


def skinning_matrices(rig: HandRig, pose: Pose) -> np.ndarray:
    """Per-joint 4x4 matrices M_j mapping rest-pose points to posed points."""
    if pose.joint_angles.shape[0] != rig.n_joints:
        raise ValueError(
            f"pose has {pose.joint_angles.shape[0]} joints, rig has {rig.n_joints}")
    rest_world = rig.joint_rest_world()
    posed = np.zeros_like(rest_world)
    for j in range(rig.n_joints):
        local = rig.joint_rest_local[j].astype(np.float64).copy()
        rot = np.eye(4)
        rot[:3, :3] = euler_to_mat(pose.joint_angles[j])
        p = rig.joint_parents[j]
        chain = local @ rot
        posed[j] = chain if p < 0 else posed[p] @ chain
    g = pose.global_transform
    return np.stack([g @ posed[j] @ np.linalg.inv(rest_world[j])
                     for j in range(rig.n_joints)]).astype(np.float64)


def skin_with_matrices(vertices: np.ndarray, weights: np.ndarray,
                       mats: np.ndarray) -> np.ndarray:
    """v' = sum_j w_vj * (M_j v), the LBS convex blend."""
    v = vertices.astype(np.float64)
    out = np.zeros_like(v)
    for j in range(mats.shape[0]):
        w = weights[:, j]
        if not np.any(w):
            continue
        t = v @ mats[j, :3, :3].T + mats[j, :3, 3]
        out += w[:, None] * t
    return out.astype(np.float32)


def skin(rig: HandRig, pose: Pose) -> np.ndarray:
    """Posed vertex array for the rig under the given pose."""
    return skin_with_matrices(rig.vertices, rig.skin_weights, skinning_matrices(rig, pose))


# ---------------------------------------------------------------------------
# procedural desk-scale hand
# ---------------------------------------------------------------------------

class _MeshBuilder:
    def __init__(self):
        self.verts: list = []
        self.uvs: list = []
        self.faces: list = []
        self.patches: list = []   # (vertex range, joint id, blend info)

    def grid_patch(self, corners, nu, nv, uv_rect):
        """Bilinear 3D patch from 4 corners, mapped to a UV rectangle.

        corners: (p00, p10, p01, p11); returns the vertex index block.
        """
        p00, p10, p01, p11 = (np.asarray(c, dtype=np.float64) for c in corners)
        u0, v0, u1, v1 = uv_rect
        base = len(self.verts)
        for iv in range(nv + 1):
            t = iv / nv
            for iu in range(nu + 1):
                s = iu / nu
                p = (1 - s) * (1 - t) * p00 + s * (1 - t) * p10 \
                    + (1 - s) * t * p01 + s * t * p11
                self.verts.append(p)
                self.uvs.append((u0 + s * (u1 - u0), v0 + t * (v1 - v0)))
        for iv in range(nv):
            for iu in range(nu):
                a = base + iv * (nu + 1) + iu
                b = a + 1
                c = a + (nu + 1)
                d = c + 1
                self.faces.append((a, b, d))
                self.faces.append((a, d, c))
        return base, len(self.verts)


def _box_patches(builder, lo, hi, nu, nv, rects):
    """Six grid patches forming an axis-aligned box; rects maps face->uv."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    spans = []
    # +z / -z (front/back), +x / -x, +y / -y
    spans.append(builder.grid_patch(((x0, y0, z1), (x1, y0, z1), (x0, y1, z1), (x1, y1, z1)),
                                    nu, nv, rects[0]))
    spans.append(builder.grid_patch(((x1, y0, z0), (x0, y0, z0), (x1, y1, z0), (x0, y1, z0)),
                                    nu, nv, rects[1]))
    spans.append(builder.grid_patch(((x1, y0, z1), (x1, y0, z0), (x1, y1, z1), (x1, y1, z0)),
                                    max(nu // 3, 1), nv, rects[2]))
    spans.append(builder.grid_patch(((x0, y0, z0), (x0, y0, z1), (x0, y1, z0), (x0, y1, z1)),
                                    max(nu // 3, 1), nv, rects[3]))
    spans.append(builder.grid_patch(((x0, y1, z1), (x1, y1, z1), (x0, y1, z0), (x1, y1, z0)),
                                    nu, max(nv // 3, 1), rects[4]))
    spans.append(builder.grid_patch(((x0, y0, z0), (x1, y0, z0), (x0, y0, z1), (x1, y0, z1)),
                                    nu, max(nv // 3, 1), rects[5]))
    return spans


def make_hand_rig(finger_count: int = 5) -> HandRig:
    """Procedural palm-and-fingers rig: J = 1 + 3*finger_count joints."""
    b = _MeshBuilder()
    m = 0.012  # uv margin inside each atlas slot

    # palm box occupies the left 38% of the atlas
    palm_lo = (-42.0, -45.0, -12.0)
    palm_hi = (42.0, 35.0, 12.0)
    palm_rects = [
        (0.02, 0.02, 0.36, 0.34),
        (0.02, 0.36, 0.36, 0.68),
        (0.02, 0.70, 0.10, 0.98),
        (0.12, 0.70, 0.20, 0.98),
        (0.22, 0.70, 0.36, 0.80),
        (0.22, 0.84, 0.36, 0.94),
    ]
    palm_span = _box_patches(b, palm_lo, palm_hi, 10, 10, palm_rects)
    palm_end = len(b.verts)

    seg_lengths = (30.0, 24.0, 19.0)
    finger_scale = (0.98, 1.06, 1.0, 0.92, 0.84)
    xs = np.linspace(-34.0, 34.0, finger_count)
    joint_pos = [np.array([0.0, 0.0, 0.0])]
    parents = [-1]
    finger_spans = []

    col_w = (1.0 - 0.40) / finger_count
    for f in range(finger_count):
        scale = finger_scale[f % len(finger_scale)]
        base = np.array([xs[f], 35.0, 0.0])
        half = 6.3 * scale
        y_cursor = base[1]
        col_x0 = 0.40 + f * col_w
        row_h = 1.0 / 18.0
        row = 0
        for s in range(3):
            length = seg_lengths[s] * scale
            parent = 0 if s == 0 else len(joint_pos) - 1
            joint_pos.append(np.array([base[0], y_cursor, 0.0]))
            parents.append(parent)
            lo = (base[0] - half, y_cursor, -half)
            hi = (base[0] + half, y_cursor + length, half)
            rects = []
            for k in range(6):
                r0 = (col_x0 + m, row * row_h + m,
                      col_x0 + col_w - m, (row + 1) * row_h - m)
                rects.append(r0)
                row += 1
            spans = _box_patches(b, lo, hi, 3, 4, rects[:6])
            finger_spans.append((spans, len(joint_pos) - 1, y_cursor, parent))
            y_cursor += length
            half *= 0.92

    verts = np.array(b.verts, dtype=np.float32)
    uv = np.clip(np.array(b.uvs, dtype=np.float32), 0.0, 1.0)
    faces = np.array(b.faces, dtype=np.int32)

    n_joints = len(joint_pos)
    rest_local = np.zeros((n_joints, 4, 4), dtype=np.float32)
    for j in range(n_joints):
        t = np.eye(4)
        p = parents[j]
        t[:3, 3] = joint_pos[j] - (joint_pos[p] if p >= 0 else 0.0)
        rest_local[j] = t

    weights = np.zeros((len(verts), n_joints), dtype=np.float32)
    weights[:palm_end, 0] = 1.0
    blend = 5.0  # mm of smooth blending across each joint
    for spans, joint, y_base, parent in finger_spans:
        for start, end in spans:
            y = verts[start:end, 1].astype(np.float64)
            t = np.clip((y - y_base + blend * 0.5) / blend, 0.0, 1.0)
            weights[start:end, joint] = t
            weights[start:end, parent] = 1.0 - t
    weights /= weights.sum(axis=1, keepdims=True)

    return HandRig(verts, faces, uv, np.array(parents, np.int32), rest_local, weights)


def make_uv_sphere(radius: float = 50.0, n_lat: int = 24, n_lon: int = 48,
                   center=(0.0, 0.0, 0.0)):
    """Plain triangulated sphere (verts, faces) for oracle/benchmark scenes."""
    cx, cy, cz = center
    verts = []
    for i in range(n_lat + 1):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append((cx + radius * np.sin(theta) * np.cos(phi),
                          cy + radius * np.cos(theta),
                          cz + radius * np.sin(theta) * np.sin(phi)))
    faces = []
    for i in range(n_lat):
        for j in range(n_lon):
            a = i * n_lon + j
            b = i * n_lon + (j + 1) % n_lon
            c = a + n_lon
            d = b + n_lon
            if i > 0:
                faces.append((a, b, c))
            if i < n_lat - 1:
                faces.append((b, d, c))
    return np.array(verts, np.float32), np.array(faces, np.int32)


# ---------------------------------------------------------------------------
# OBJ + sidecar IO
# ---------------------------------------------------------------------------

def save_obj(path, rig: HandRig) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# linlight hand rig\n")
        for v in rig.vertices:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for t in rig.uv:
            fh.write(f"vt {t[0]:.6f} {t[1]:.6f}\n")
        for f in rig.faces + 1:
            fh.write(f"f {f[0]}/{f[0]} {f[1]}/{f[1]} {f[2]}/{f[2]}\n")
    _save_sidecar(path.with_suffix(".rig.txt"), rig)


def _save_sidecar(path, rig: HandRig) -> None:
    with open(path, "w") as fh:
        fh.write("# linlight skeleton sidecar\n")
        fh.write(f"joints {rig.n_joints}\n")
        for j in range(rig.n_joints):
            flat = " ".join(f"{v:.8g}" for v in rig.joint_rest_local[j].reshape(-1))
            fh.write(f"{j} {rig.joint_parents[j]} {flat}\n")
        fh.write(f"weights {rig.n_vertices} {rig.n_joints}\n")
        for row in rig.skin_weights:
            fh.write(" ".join(f"{v:.8g}" for v in row) + "\n")


def load_obj(path) -> HandRig:
    """OBJ with v/vt faces; vertices are split per unique (v, vt) pair."""
    path = Path(path)
    positions, texcoords, tri_pairs = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                texcoords.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                corner = []
                for tok in parts[1:4]:
                    vi, _, ti = tok.partition("/")
                    corner.append((int(vi) - 1, int(ti or vi) - 1))
                tri_pairs.append(corner)
    aligned = (len(positions) == len(texcoords)
               and all(vi == ti for tri in tri_pairs for vi, ti in tri))
    if aligned:
        # our own files: one vt per v, keep the original ordering intact
        verts, uv = positions, texcoords
        faces = [[vi for vi, _ in tri] for tri in tri_pairs]
        orig_index = list(range(len(positions)))
    else:
        remap: dict = {}
        verts, uv, faces = [], [], []
        orig_index = []
        for tri in tri_pairs:
            idx = []
            for pair in tri:
                if pair not in remap:
                    remap[pair] = len(verts)
                    verts.append(positions[pair[0]])
                    uv.append(texcoords[pair[1]])
                    orig_index.append(pair[0])
                idx.append(remap[pair])
            faces.append(idx)

    side = _load_sidecar(path.with_suffix(".rig.txt"))
    parents, rest_local, weights = side
    weights = weights[np.array(orig_index, dtype=np.int64)]
    return HandRig(np.array(verts, np.float32), np.array(faces, np.int32),
                   np.array(uv, np.float32), parents, rest_local, weights)


def _load_sidecar(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    it = iter(lines)
    head = next(it).split()
    n_joints = int(head[1])
    parents = np.zeros(n_joints, np.int32)
    rest_local = np.zeros((n_joints, 4, 4), np.float32)
    for _ in range(n_joints):
        parts = next(it).split()
        j = int(parts[0])
        parents[j] = int(parts[1])
        rest_local[j] = np.array([float(x) for x in parts[2:18]]).reshape(4, 4)
    head = next(it).split()
    n_v, n_j = int(head[1]), int(head[2])
    weights = np.zeros((n_v, n_j), np.float32)
    for i in range(n_v):
        weights[i] = [float(x) for x in next(it).split()]
    return parents, rest_local, weights
