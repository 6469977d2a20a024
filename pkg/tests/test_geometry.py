import numpy as np
import pytest

from linlight import geometry as G
from linlight import tensor as T
from linlight.tensor import Tensor

from conftest import max_rel_err
import oracles


@pytest.fixture(scope="module")
def rig():
    return G.make_hand_rig()


def make_plane_rig(n=8, size=100.0):
    """Flat quad grid covering the full UV square, z = 0, single static joint."""
    ii = np.arange(n + 1) / n
    uu, vv = np.meshgrid(ii, ii, indexing="xy")
    verts = np.stack([uu * size, vv * size, np.zeros_like(uu)], axis=-1).reshape(-1, 3)
    uv = np.stack([uu, vv], axis=-1).reshape(-1, 2)
    faces = []
    for iy in range(n):
        for ix in range(n):
            a = iy * (n + 1) + ix
            faces.append((a, a + 1, a + n + 2))
            faces.append((a, a + n + 2, a + n + 1))
    weights = np.ones((len(verts), 1), np.float32)
    rest = np.eye(4, dtype=np.float32)[None]
    return G.HandRig(verts.astype(np.float32), np.array(faces, np.int32),
                     uv.astype(np.float32), np.array([-1], np.int32), rest, weights)


class TestRig:
    def test_counts(self, rig):
        assert rig.n_joints == 16
        assert 1000 <= rig.n_vertices <= 4000
        assert rig.skin_weights.shape == (rig.n_vertices, 16)

    def test_weight_rows_normalized(self, rig):
        rows = rig.skin_weights.sum(axis=1)
        assert np.abs(rows - 1.0).max() < 1e-6
        assert rig.skin_weights.min() >= 0.0

    def test_uv_in_unit_square(self, rig):
        assert rig.uv.min() >= 0.0 and rig.uv.max() <= 1.0

    def test_parent_tree_rooted_at_zero(self, rig):
        assert rig.joint_parents[0] == -1
        assert all(0 <= rig.joint_parents[j] < j for j in range(1, rig.n_joints))

    def test_bad_face_index_rejected(self, rig):
        bad = G.HandRig.__new__(G.HandRig)
        with pytest.raises(ValueError, match="out of range"):
            G.HandRig(rig.vertices, np.array([[0, 1, rig.n_vertices]], np.int32),
                      rig.uv, rig.joint_parents, rig.joint_rest_local, rig.skin_weights)
        del bad


class TestSkin:
    def test_rest_pose_is_identity(self, rig):
        posed = G.skin(rig, G.Pose.rest(rig.n_joints))
        assert np.allclose(posed, rig.vertices, atol=1e-4)

    def test_rotation_90deg_about_z(self):
        # one joint at the origin, one rigidly bound vertex at (1,0,0)
        rig1 = G.HandRig(np.array([[1.0, 0, 0]], np.float32),
                         np.zeros((0, 3), np.int32), np.array([[0.5, 0.5]], np.float32),
                         np.array([-1], np.int32), np.eye(4, dtype=np.float32)[None],
                         np.ones((1, 1), np.float32))
        pose = G.Pose(np.array([[0.0, 0.0, np.pi / 2]]))
        posed = G.skin(rig1, pose)
        assert np.allclose(posed[0], [0.0, 1.0, 0.0], atol=1e-6)

    def test_convex_blend_of_translation(self):
        verts = np.array([[0.0, 0.0, 0.0]], np.float32)
        weights = np.array([[0.5, 0.5]], np.float32)
        mats = np.stack([np.eye(4), np.eye(4)])
        mats[1, 0, 3] = 2.0  # +2 mm x
        posed = G.skin_with_matrices(verts, weights, mats)
        assert np.allclose(posed[0], [1.0, 0.0, 0.0], atol=1e-7)

    def test_joint_count_mismatch_rejected(self, rig):
        with pytest.raises(ValueError, match="joints"):
            G.skin(rig, G.Pose(np.zeros((3, 3))))

    def test_one_hot_subsets_move_rigidly(self, rig, rng):
        pose = G.Pose(rng.uniform(-0.5, 0.5, (rig.n_joints, 3)))
        mats = G.skinning_matrices(rig, pose)
        posed = G.skin(rig, pose)
        one_hot = rig.skin_weights.max(axis=1) > 1.0 - 1e-7
        joints = rig.skin_weights.argmax(axis=1)
        for j in np.unique(joints[one_hot]):
            sel = one_hot & (joints == j)
            expect = rig.vertices[sel] @ mats[j, :3, :3].T + mats[j, :3, 3]
            assert np.abs(posed[sel] - expect).max() < 1e-4

    def test_global_transform_applies(self, rig):
        g = np.eye(4)
        g[:3, 3] = (5.0, -2.0, 1.0)
        posed = G.skin(rig, G.Pose(np.zeros((rig.n_joints, 3)), g))
        assert np.allclose(posed, rig.vertices + np.array([5.0, -2.0, 1.0]), atol=1e-4)


class TestObjIO:
    def test_round_trip(self, tmp_path, rig):
        G.save_obj(tmp_path / "hand.obj", rig)
        back = G.load_obj(tmp_path / "hand.obj")
        assert back.n_vertices == rig.n_vertices
        assert np.allclose(back.vertices, rig.vertices, atol=1e-4)
        assert np.allclose(back.uv, rig.uv, atol=1e-5)
        assert np.array_equal(back.joint_parents, rig.joint_parents)
        assert np.allclose(back.skin_weights, rig.skin_weights, atol=1e-5)
        # posed geometry mm-identical after a round trip
        pose = G.Pose(np.full((rig.n_joints, 3), 0.2))
        assert np.allclose(G.skin(back, pose), G.skin(rig, pose), atol=1e-3)


class TestUnwrap:
    def test_planar_quad_normals(self):
        plane = make_plane_rig()
        maps = G.unwrap(plane, plane.vertices, 64)
        assert maps.valid.mean() > 0.95
        n = maps.normal[maps.valid]
        assert np.abs(n - np.array([0, 0, 1.0])).max() < 1e-5

    def test_half_coverage_validity_fraction(self):
        plane = make_plane_rig()
        # squeeze the mesh into the left half of uv space
        half = G.HandRig(plane.vertices, plane.faces,
                         plane.uv * np.array([0.5, 1.0], np.float32),
                         plane.joint_parents, plane.joint_rest_local,
                         plane.skin_weights)
        maps = G.unwrap(half, half.vertices, 128)
        frac = maps.valid.mean()
        assert abs(frac - 0.5) < 0.02

    def test_resolution_consistency_against_affine_oracle(self):
        plane = make_plane_rig(n=4, size=80.0)
        for r in (64, 128):
            maps = G.unwrap(plane, plane.vertices, r)
            iy, ix = np.nonzero(maps.valid)
            u = (ix + 0.5) / r
            v = (iy + 0.5) / r
            expect = np.stack([u * 80.0, v * 80.0, np.zeros_like(u)], axis=-1)
            assert np.abs(maps.position[maps.valid] - expect).max() < 1e-4

    def test_zero_area_uv_faces_counted(self):
        plane = make_plane_rig(n=2)
        uv = plane.uv.copy()
        uv[1] = uv[0]
        uv[4] = uv[0]
        uv[3] = uv[0]  # degenerate first cell
        squashed = G.HandRig(plane.vertices, plane.faces, uv, plane.joint_parents,
                             plane.joint_rest_local, plane.skin_weights)
        maps = G.unwrap(squashed, squashed.vertices, 32)
        assert maps.degenerate_faces >= 1

    def test_invalid_texels_zeroed(self, rig):
        maps = G.unwrap(rig, rig.vertices, 128)
        assert np.all(maps.position[~maps.valid] == 0.0)
        assert np.all(maps.normal[~maps.valid] == 0.0)
        lens = np.linalg.norm(maps.normal[maps.valid], axis=1)
        assert np.abs(lens - 1.0).max() < 1e-4


class TestDisplacement:
    def test_zero_raw_is_identity(self):
        plane = make_plane_rig()
        maps = G.unwrap(plane, plane.vertices, 64)
        refined = G.apply_displacement(maps, np.zeros((64, 64), np.float32))
        assert np.array_equal(refined.position, maps.position)
        assert np.abs(refined.normal[maps.valid] - maps.normal[maps.valid]).max() < 1e-4

    def test_saturation_stays_below_3mm(self):
        raw = np.array([[1e4, -1e4], [0.0, 5.0]], np.float32)
        d = G.displacement_from_raw(raw)
        assert np.all(np.abs(d) < 3.0)
        assert d[0, 0] > 2.999 and d[0, 1] < -2.999
        # monotone in raw
        grid = G.displacement_from_raw(np.linspace(-5, 5, 33).astype(np.float32))
        assert np.all(np.diff(grid) > 0)

    def test_random_activations_bounded(self, rng):
        raw = rng.standard_normal(10000).astype(np.float32) * 50
        assert np.all(np.abs(G.displacement_from_raw(raw)) < 3.0)

    def test_sine_displacement_matches_analytic_normals(self):
        size, amp, r = 100.0, 1.0, 256
        plane = make_plane_rig(n=8, size=size)
        maps = G.unwrap(plane, plane.vertices, r)
        iy, ix = np.nonzero(maps.valid)
        u = (ix + 0.5) / r
        delta = amp * np.sin(2 * np.pi * u)
        # invert the activation to get raw values producing this delta
        s = np.clip((delta / 3.0 + 1.0) / 2.0, 1e-6, 1 - 1e-6)
        raw = np.zeros((r, r), np.float32)
        raw[maps.valid] = np.log(s / (1 - s)).astype(np.float32)
        refined = G.apply_displacement(maps, raw)
        interior = G.uvmaps.interior_mask(maps.valid)
        iy, ix = np.nonzero(interior)
        u = (ix + 0.5) / r
        dz = amp * 2 * np.pi / size * np.cos(2 * np.pi * u)
        expect = np.stack([-dz, np.zeros_like(dz), np.ones_like(dz)], axis=-1)
        expect /= np.linalg.norm(expect, axis=1, keepdims=True)
        got = refined.normal[interior]
        err = np.linalg.norm(got - expect, axis=1)
        assert err.max() < 0.02

    def test_tensor_path_matches_numpy_path(self, rig, rng):
        maps = G.unwrap(rig, rig.vertices, 64)
        raw = (rng.standard_normal((64, 64)) * 2).astype(np.float32)
        ref = G.apply_displacement(maps, raw)
        xhat_t, nrm_t = G.refined_normals_t(maps, Tensor(raw[None]))
        assert max_rel_err(xhat_t.data.transpose(1, 2, 0)[maps.valid],
                           ref.position[maps.valid], floor=1e-2) < 1e-5
        assert np.abs(nrm_t.data.transpose(1, 2, 0)[maps.valid]
                      - ref.normal[maps.valid]).max() < 1e-5

    def test_displacement_gradient_flows(self, rig):
        maps = G.unwrap(rig, rig.vertices, 32)
        raw = Tensor(np.zeros((1, 32, 32), np.float32), requires_grad=True)
        xhat, nrm = G.refined_normals_t(maps, raw)
        T.backward(T.tsum(T.mul(xhat, xhat)))
        assert raw.grad is not None and np.abs(raw.grad).max() > 0


def brute_force_visible(origins, direction, verts, faces, tmin=1e-4):
    """Independent any-hit oracle: dense Moller-Trumbore in float64."""
    v0 = verts[faces[:, 0]].astype(np.float64)
    e1 = verts[faces[:, 1]].astype(np.float64) - v0
    e2 = verts[faces[:, 2]].astype(np.float64) - v0
    d = np.asarray(direction, np.float64)
    out = np.ones(len(origins), np.uint8)
    for i, o in enumerate(origins.astype(np.float64)):
        p = np.cross(d, e2)
        det = (e1 * p).sum(1)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - v0
        uu = (tv * p).sum(1) * inv
        q = np.cross(tv, e1)
        vv = (q @ d) * inv
        tt = (q * e2).sum(1) * inv
        hit = ok & (uu >= 0) & (uu <= 1) & (vv >= 0) & (uu + vv <= 1) & (tt > tmin)
        out[i] = 0 if hit.any() else 1
    return out


class TestVisibility:
    def test_open_sky(self):
        verts, faces = G.make_uv_sphere(10.0, 8, 12, center=(0, -100, 0))
        occ = G.MeshOccluder(verts, faces)
        assert occ.visibility(np.zeros(3), (0, 1, 0), normal=(0, 1, 0)) == 1

    def test_under_sphere(self):
        verts, faces = G.make_uv_sphere(20.0, 12, 16, center=(0, 40, 0))
        occ = G.MeshOccluder(verts, faces)
        assert occ.visibility(np.zeros(3), (0, 1, 0), normal=(0, 1, 0)) == 0

    def test_nonunit_direction_rejected(self):
        verts, faces = G.make_uv_sphere(5.0, 6, 8)
        occ = G.MeshOccluder(verts, faces)
        with pytest.raises(ValueError, match="unit"):
            occ.visibility(np.zeros(3), (0, 2, 0))

    def test_shadow_mask_matches_brute_force(self):
        verts, faces = G.make_uv_sphere(18.0, 14, 20, center=(3.0, 35.0, -2.0))
        occ = G.MeshOccluder(verts, faces)
        xs = np.linspace(-40, 40, 64)
        gx, gz = np.meshgrid(xs, xs, indexing="xy")
        pts = np.stack([gx, np.zeros_like(gx), gz], axis=-1).reshape(-1, 3).astype(np.float32)
        nrm = np.tile(np.array([[0, 1, 0]], np.float32), (pts.shape[0], 1))
        got = occ.visibility_matrix(pts, nrm, np.array([[0, 1, 0]], np.float32))[:, 0]
        expect = brute_force_visible(pts + 0.1 * nrm, (0, 1, 0), verts, faces)
        assert np.array_equal(got, expect)
        assert 0.05 < 1.0 - got.mean() < 0.95  # mask is non-trivial


@pytest.fixture(scope="module")
def raster_scene():
    plane = make_plane_rig(n=4, size=100.0)
    cam = G.Camera.look_at((50, 50, 220.0), (50, 50, 0), up=(0, 1, 0),
                           fov_deg=35.0, width=96, height=96)
    rmap = G.rasterize_geometry(plane.vertices, plane.faces, plane.uv, cam, 32)
    return plane, cam, rmap


class TestRasterize:

    def test_constant_texture_exact(self, raster_scene):
        _, _, rmap = raster_scene
        tex = np.zeros((3, 32, 32), np.float32)
        tex[0] = 1.0
        img = G.sample_texture_np(rmap, tex)
        cover = rmap.coverage
        assert cover.sum() > 100
        assert np.all(img[0][cover] == 1.0)
        assert np.all(img[1][cover] == 0.0)
        assert np.all(img[:, ~cover] == 0.0)

    def test_gradient_is_total_bilinear_weight(self, raster_scene, rng):
        _, _, rmap = raster_scene
        tex = Tensor(rng.random((1, 32, 32), dtype=np.float32), requires_grad=True)
        img = G.sample_texture(rmap, tex)
        T.backward(T.tsum(img))
        expect = np.zeros(32 * 32, np.float64)
        np.add.at(expect, rmap.texel_index.ravel(),
                  rmap.texel_weight.ravel().astype(np.float64))
        assert max_rel_err(tex.grad.reshape(-1), expect, floor=1e-3) < 1e-3

    def test_gradient_matches_finite_differences(self, raster_scene, rng):
        _, _, rmap = raster_scene
        w = rng.random((1, 96, 96), dtype=np.float32)
        tex_v = rng.random((1, 32, 32), dtype=np.float32)
        tex = Tensor(tex_v, requires_grad=True)
        T.backward(T.tsum(T.mul(G.sample_texture(rmap, tex), Tensor(w))))

        def gather_f64(tv):
            # independent float64 4-tap gather through the sampling plan
            flat = tv.reshape(-1).astype(np.float64)
            vals = (flat[rmap.texel_index] * rmap.texel_weight.astype(np.float64)).sum(1)
            return float((vals * w.reshape(-1)[rmap.pix_index]).sum())

        h = 1e-3
        sample = rng.integers(0, 32 * 32, 40)
        flat = tex_v.reshape(-1)
        grad = tex.grad.reshape(-1)
        for i in sample:
            old = flat[i]
            flat[i] = old + h
            up = gather_f64(tex_v)
            flat[i] = old - h
            dn = gather_f64(tex_v)
            flat[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - grad[i]) < 1e-3 * max(1.0, abs(fd))

    def test_linearity_in_texture(self, raster_scene, rng):
        _, _, rmap = raster_scene
        c1 = rng.random((3, 32, 32), dtype=np.float32)
        c2 = rng.random((3, 32, 32), dtype=np.float32)
        a, b = 1.7, -0.4
        lhs = G.sample_texture_np(rmap, (a * c1 + b * c2).astype(np.float32))
        rhs = a * G.sample_texture_np(rmap, c1) + b * G.sample_texture_np(rmap, c2)
        assert np.abs(lhs - rhs).max() < 1e-5

    def test_resolution_area_scaling(self):
        # base resolution large enough that boundary quantization O(1/s) < 2%
        plane = make_plane_rig(n=4, size=100.0)
        counts = []
        for s in (256, 512):
            cam = G.Camera.look_at((50, 50, 220.0), (50, 50, 0), fov_deg=35.0,
                                   width=s, height=s)
            rmap = G.rasterize_geometry(plane.vertices, plane.faces, plane.uv, cam, 16)
            counts.append(rmap.coverage.sum())
        ratio = counts[1] / counts[0]
        assert abs(ratio - 4.0) < 4.0 * 0.02

    def test_camera_behind_mesh_empty(self):
        plane = make_plane_rig(n=2, size=100.0)
        cam = G.Camera.look_at((50, 50, -220.0), (50, 50, -400.0), fov_deg=35.0,
                               width=64, height=64)
        rmap = G.rasterize_geometry(plane.vertices, plane.faces, plane.uv, cam, 16)
        assert rmap.coverage.sum() == 0

    def test_camera_text_round_trip(self, raster_scene):
        _, cam, _ = raster_scene
        back = G.Camera.from_text(cam.to_text())
        assert back.fx == cam.fx and back.width == cam.width
        assert np.allclose(back.extrinsic, cam.extrinsic)
