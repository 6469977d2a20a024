import numpy as np
import pytest

from linlight import geometry as G
from linlight import shading as S
from linlight import tensor as T
from linlight.tensor import Tensor

from conftest import max_rel_err


def white_lights(dirs, intensity=1.0):
    d = np.asarray(dirs, np.float64).reshape(-1, 3)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return S.LightSet(d.astype(np.float32),
                      np.full((d.shape[0], 3), intensity, np.float32))


class TestBrdfTerms:
    def test_ggx_d_beta_one_is_inv_pi(self):
        for nh in (0.1, 0.5, 1.0):
            assert S.ggx_D(nh, 1.0) == pytest.approx(1.0 / np.pi, rel=1e-12)

    def test_ggx_d_half_beta_head_on(self):
        # beta^4/(pi*beta^8) = 1/(pi*beta^4) at n.h = 1
        assert S.ggx_D(1.0, 0.5) == pytest.approx(5.092958178940651, rel=1e-9)

    def test_ggx_d_sharper_is_higher_at_peak(self):
        betas = [0.05, 0.1, 0.3, 0.6, 1.0]
        peaks = [S.ggx_D(1.0, b) for b in betas]
        assert all(a > b for a, b in zip(peaks, peaks[1:]))

    def test_schlick_f_grazing_limit(self):
        assert S.schlick_F(0.0) == pytest.approx(1.0, abs=1e-12)

    def test_schlick_f_head_on(self):
        # 0.04 + 0.96 * 2**(-12.53789), evaluated independently
        assert S.schlick_F(1.0) == pytest.approx(0.04016143223543417, rel=1e-9)

    def test_schlick_f_bounded(self):
        dh = np.linspace(0.0, 1.0, 101)
        f = S.schlick_F(dh)
        assert np.all(f >= S.F0 - 1e-12) and np.all(f <= 1.0 + 1e-12)

    def test_smith_g_head_on_quarter(self):
        for beta in (0.05, 0.3, 0.7, 1.0):
            assert S.smith_G(1.0, 1.0, beta) == pytest.approx(0.25, rel=1e-12)

    def test_smith_g_grazing_light_limit(self):
        beta = 0.5
        k = (beta + 1.0) ** 2 / 8.0
        expect = 1.0 / (4.0 * k * (1.0 * (1.0 - k) + k))
        assert S.smith_G(1.0, 0.0, beta) == pytest.approx(expect, rel=1e-12)

    def test_smith_g_positive(self, rng):
        nd = rng.uniform(0, 1, 50)
        nl = rng.uniform(0, 1, 50)
        beta = rng.uniform(0.02, 1.0, 50)
        assert np.all(S.smith_G(nd, nl, beta) > 0)

    def test_ggx_normalization_monte_carlo(self, rng):
        """Hemisphere integral of D(h)(n.h) dh is ~1 for every beta.

        Sharp lobes (width ~ beta^4) defeat uniform sampling, so importance
        sample from an analytically normalized density of the same family but
        deliberately different width (2*beta^4): the weights then genuinely
        test the implemented D, not the sampler.
        """
        n_samp = 100_000
        for beta in (0.02, 0.05, 0.2, 0.5, 1.0):
            ap = 2.0 * beta ** 4
            xi = rng.uniform(1e-9, 1.0, n_samp)
            t = np.sqrt(xi / (xi + ap * (1.0 - xi)))
            bp = t * t * (ap - 1.0) + 1.0
            q = 2.0 * ap * t / (bp * bp)      # integrates to 1 on [0,1]
            w = S.ggx_D(t, beta) * t * 2.0 * np.pi / q
            assert abs(w.mean() - 1.0) < 0.05, beta


class TestDiffuse:
    def test_light_along_normal(self):
        n = np.array([[0, 1.0, 0]], np.float32)
        lights = white_lights([[0, 1.0, 0]])
        vis = np.ones((1, 1), np.float64)
        out = S.diffuse_points(n, lights, vis)
        assert out[0] == pytest.approx([1.0, 1.0, 1.0])

    def test_below_horizon_is_zero(self):
        n = np.array([[0, 1.0, 0]], np.float32)
        lights = white_lights([[0, -1.0, 0]])
        out = S.diffuse_points(n, lights, np.ones((1, 1)))
        assert np.all(out == 0.0)

    def test_two_lights_sum_exactly(self, rng):
        n = rng.standard_normal((64, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        l1 = white_lights([[0.2, 1, 0.1]], 0.7)
        l2 = white_lights([[-0.4, 0.8, 0.3]], 1.3)
        vis = (rng.random((64, 2)) > 0.3).astype(np.float64)
        both = S.diffuse_points(n.astype(np.float32), l1.union(l2), vis)
        single = (S.diffuse_points(n.astype(np.float32), l1, vis[:, :1])
                  + S.diffuse_points(n.astype(np.float32), l2, vis[:, 1:]))
        assert max_rel_err(both, single, floor=1e-4) < 1e-6


class TestSpecular:
    def test_head_on_mirror_configuration(self):
        n = np.array([[0, 0, 1.0]], np.float32)
        d = np.array([[0, 0, 1.0]], np.float32)
        beta = np.array([0.5], np.float32)
        lights = white_lights([[0, 0, 1.0]])
        out = S.specular_points(n, d, beta, lights, np.ones((1, 1)))
        # D*F*G = 5.0929581 * 0.04016143 * 0.25
        assert out[0, 0] == pytest.approx(0.05113512369535629, rel=1e-5)

    def test_shadowed_is_zero(self):
        n = d = np.array([[0, 0, 1.0]], np.float32)
        lights = white_lights([[0, 0, 1.0]])
        out = S.specular_points(n, d, np.array([0.5], np.float32), lights,
                                np.zeros((1, 1)))
        assert np.all(out == 0.0)

    def test_backfacing_is_zero(self):
        n = np.array([[0, 0, 1.0]], np.float32)
        d = np.array([[0, 0, -1.0]], np.float32)
        lights = white_lights([[0, 0, 1.0]])
        out = S.specular_points(n, d, np.array([0.5], np.float32), lights,
                                np.ones((1, 1)))
        assert np.all(out == 0.0)

    def test_beta_continuity(self, rng):
        n = np.array([[0, 0, 1.0]] * 8, np.float32)
        d = rng.standard_normal((8, 3))
        d[:, 2] = np.abs(d[:, 2]) + 0.5
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        lights = white_lights(rng.standard_normal((20, 3)))
        vis = np.ones((8, 20))
        for beta in (0.02, 0.1, 0.5, 0.93):
            b0 = np.full(8, beta, np.float32)
            a = S.specular_points(n, d.astype(np.float32), b0, lights, vis)
            b = S.specular_points(n, d.astype(np.float32), b0 + 1e-4, lights, vis)
            assert max_rel_err(b, a, floor=1e-4) < 1e-2

    def test_uniform_env_matches_monte_carlo(self, rng):
        """Binned-light evaluation vs direct hemisphere Monte-Carlo."""
        env = S.uniform_env(16, 32, 1.0)
        lights = S.env_to_lights(env, 512)
        n = np.array([[0, 0, 1.0]], np.float32)
        d0 = np.array([0.3, 0.1, 1.0])
        d0 /= np.linalg.norm(d0)
        d = d0[None].astype(np.float32)
        beta = np.array([0.5], np.float32)
        got = S.specular_points(n, d, beta, lights,
                                np.ones((1, len(lights))))[0, 0]

        n_samp = 100_000
        u = rng.random(n_samp)
        z = u                                  # uniform hemisphere in z
        phi = 2 * np.pi * rng.random(n_samp)
        r = np.sqrt(np.maximum(0.0, 1 - z * z))
        w = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        h = w + d0[None]
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        nh = h[:, 2]
        dh = h @ d0
        nl = w[:, 2]
        nd = d0[2]
        integrand = (S.ggx_D(nh, 0.5) * S.schlick_F(dh)
                     * S.smith_G(nd, nl, 0.5) * np.maximum(nl, 0.0))
        mc = 2 * np.pi * integrand.mean()
        assert abs(got - mc) / mc < 0.02


class TestEnvToLights:
    def test_total_solid_angle(self):
        env = S.uniform_env(32, 64, 1.0)
        for n in (16, 100, 256, 511):
            lights = S.env_to_lights(env, n)
            assert len(lights) == n
            total = lights.intensities[:, 0].astype(np.float64).sum()
            assert abs(total - 4 * np.pi) < 4 * np.pi * 0.001

    def test_uniform_env_irradiance_is_pi(self):
        env = S.uniform_env(32, 64, 1.0)
        n = np.array([[0, 1.0, 0]], np.float32)
        for count in (256, 512):
            lights = S.env_to_lights(env, count)
            out = S.diffuse_points(n, lights, np.ones((1, count)))
            assert abs(out[0, 0] - np.pi) < np.pi * 0.02

    def test_single_pixel_env_single_light(self):
        rad = np.zeros((16, 32, 3), np.float32)
        rad[4, 7] = (2.0, 1.0, 0.5)
        lights = S.env_to_lights(S.EnvironmentMap(rad), 64)
        nonzero = np.flatnonzero(lights.intensities.sum(axis=1) > 0)
        assert len(nonzero) == 1

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            S.env_to_lights(S.uniform_env(4, 8), 0)

    def test_directions_unit(self):
        lights = S.env_to_lights(S.uniform_env(8, 16), 37)
        norms = np.linalg.norm(lights.directions.astype(np.float64), axis=1)
        assert np.abs(norms - 1).max() < 1e-6


class TestPhong:
    def test_mirror_aligned_view(self):
        n = np.array([[0, 0, 1.0]], np.float32)
        lights = white_lights([[0, 0, 1.0]], 0.8)
        d = np.array([[0, 0, 1.0]], np.float32)
        a, s = S.phong_points(n, d, lights, np.ones((1, 1)))
        assert s[0, 0] == pytest.approx(0.8, rel=1e-6)

    def test_perpendicular_reflection(self):
        n = np.array([[0, 0, 1.0]], np.float32)
        lights = white_lights([[1.0, 0, 0]])
        d = np.array([[0, 0, 1.0]], np.float32)
        _, s = S.phong_points(n, d, lights, np.ones((1, 1)))
        assert np.all(np.abs(s) < 1e-9)

    def test_a_equals_diffuse_feature(self, rng):
        n = rng.standard_normal((32, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        lights = white_lights(rng.standard_normal((7, 3)), 0.6)
        vis = (rng.random((32, 7)) > 0.5).astype(np.float64)
        d = np.tile(np.array([[0, 0, 1.0]], np.float32), (32, 1))
        a, _ = S.phong_points(n.astype(np.float32), d, lights, vis)
        assert np.array_equal(a, S.diffuse_points(n.astype(np.float32), lights, vis))


class TestComposePbr:
    def test_zero_features(self):
        out = S.compose_pbr(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)),
                            np.random.default_rng(0).random((4, 4, 3)))
        assert np.all(out == 0.0)

    def test_unit_diffuse_returns_texture(self, rng):
        t = rng.random((4, 4, 3)).astype(np.float32)
        out = S.compose_pbr(np.ones((4, 4, 3), np.float32),
                            np.zeros((4, 4, 3), np.float32), t)
        assert np.array_equal(out, t)

    def test_algebraic_identity(self, rng):
        cd = rng.random((4, 4, 3)).astype(np.float32)
        cs = rng.random((4, 4, 3)).astype(np.float32)
        t = rng.random((4, 4, 3)).astype(np.float32)
        out = S.compose_pbr(cd, cs, t)
        assert np.allclose(out - cs, cd * t, atol=1e-6)


@pytest.fixture(scope="module")
def scene():
    rig = G.make_hand_rig()
    pose = G.Pose.rest(rig.n_joints)
    posed = G.skin(rig, pose)
    maps = G.unwrap(rig, posed, 64)
    cam = G.Camera.look_at((0, 0, 320.0), (0, 0, 0), fov_deg=45,
                           width=96, height=96)
    occ = G.MeshOccluder(posed, rig.faces)
    return rig, maps, cam, occ


class TestFeatureProperties:

    def test_feature_level_linearity(self, scene, rng):
        _, maps, cam, occ = scene
        beta = np.full((64, 64), 0.4, np.float32)
        dirs = rng.standard_normal((8, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        l1 = S.LightSet(dirs[:4].astype(np.float32), rng.random((4, 3)).astype(np.float32))
        l2 = S.LightSet(dirs[4:].astype(np.float32), rng.random((4, 3)).astype(np.float32))
        pts = maps.position[maps.valid]
        nrm = maps.normal[maps.valid]
        vis = occ.visibility_matrix(pts, nrm, dirs.astype(np.float32)).astype(np.float64)
        a, b = 1.7, 0.6
        mixed = l1.scaled(a).union(l2.scaled(b))
        f_mixed = S.feature_maps(maps, beta, mixed, cam, vis)
        f1 = S.feature_maps(maps, beta, l1, cam, vis[:, :4])
        f2 = S.feature_maps(maps, beta, l2, cam, vis[:, 4:])
        for part in ("diffuse", "specular"):
            lhs = getattr(f_mixed, part)
            rhs = a * getattr(f1, part) + b * getattr(f2, part)
            assert max_rel_err(lhs, rhs, floor=1e-3) < 1e-5, part

    def test_features_nonnegative_and_masked(self, scene, rng):
        _, maps, cam, occ = scene
        beta = np.full((64, 64), 0.3, np.float32)
        lights = white_lights(rng.standard_normal((6, 3)), 0.9)
        pts = maps.position[maps.valid]
        nrm = maps.normal[maps.valid]
        vis = occ.visibility_matrix(pts, nrm, lights.directions).astype(np.float64)
        f = S.feature_maps(maps, beta, lights, cam, vis)
        assert f.diffuse.min() >= 0 and f.specular.min() >= 0
        assert np.all(f.diffuse[~maps.valid] == 0)
        assert np.all(f.specular[~maps.valid] == 0)

    def test_tensor_path_matches_numpy(self, scene, rng):
        _, maps, cam, occ = scene
        beta_map = rng.uniform(0.1, 0.8, (64, 64)).astype(np.float32)
        lights = white_lights(rng.standard_normal((5, 3)), 0.8)
        pts = maps.position[maps.valid]
        nrm = maps.normal[maps.valid]
        vis = occ.visibility_matrix(pts, nrm, lights.directions).astype(np.float64)
        ref = S.feature_maps(maps, beta_map, lights, cam, vis)

        vdirs = S.view_dir_map(maps, cam)
        nrm_t = Tensor(maps.normal.transpose(2, 0, 1).copy())
        beta_t = Tensor(beta_map[None].copy())
        cd_t, cs_t = S.features_t(nrm_t, S.clamp_beta_t(beta_t), maps, lights,
                                  vdirs, vis.astype(np.float32))
        assert max_rel_err(cd_t.data.transpose(1, 2, 0), ref.diffuse, floor=1e-3) < 1e-4
        assert max_rel_err(cs_t.data.transpose(1, 2, 0), ref.specular, floor=1e-3) < 1e-4

    def test_beta_gradient_flows(self, scene, rng):
        _, maps, cam, occ = scene
        lights = white_lights([[0.3, 0.2, 1.0]])
        pts = maps.position[maps.valid]
        nrm = maps.normal[maps.valid]
        vis = occ.visibility_matrix(pts, nrm, lights.directions).astype(np.float32)
        vdirs = S.view_dir_map(maps, cam)
        beta_raw = Tensor(np.zeros((1, 64, 64), np.float32), requires_grad=True)
        nrm_t = Tensor(maps.normal.transpose(2, 0, 1).copy())
        _, cs = S.features_t(nrm_t, S.clamp_beta_t(T.sigmoid(beta_raw)), maps,
                             lights, vdirs, vis)
        T.backward(T.tsum(cs))
        assert beta_raw.grad is not None and np.abs(beta_raw.grad).sum() > 0


class TestLightSetIO:
    def test_text_round_trip(self, rng):
        d = rng.standard_normal((5, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        ls = S.LightSet(d.astype(np.float32), rng.random((5, 3)).astype(np.float32))
        back = S.LightSet.from_text(ls.to_text())
        assert np.allclose(back.directions, ls.directions, atol=1e-6)
        assert np.allclose(back.intensities, ls.intensities, atol=1e-6)

    def test_nonunit_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            S.LightSet(np.array([[0, 2.0, 0]]), np.ones((1, 3)))

    def test_negative_intensity_rejected(self):
        with pytest.raises(ValueError):
            S.LightSet(np.array([[0, 1.0, 0]]), -np.ones((1, 3)))
