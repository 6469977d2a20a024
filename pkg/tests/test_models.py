import numpy as np
import pytest

from linlight import models as M
from linlight import tensor as T
from linlight.tensor import Tensor

from conftest import max_rel_err
import oracles


def rand_tex(rng, r):
    return Tensor(rng.random((3, r, r), dtype=np.float32))


def rand_pose(rng, n=48):
    return Tensor(rng.uniform(-0.5, 0.5, n).astype(np.float32))


@pytest.fixture(scope="module")
def model128():
    return M.RelightModel(resolution=128, pose_dim=48, mode="linear", seed=7)


class TestGeometryNet:
    def test_output_shapes(self, model128, rng):
        raw_d, beta = model128.geometry_forward(rand_tex(rng, 128), rand_pose(rng))
        assert raw_d.shape == (1, 128, 128)
        assert beta.shape == (1, 128, 128)

    def test_beta_in_range(self, model128, rng):
        _, beta = model128.geometry_forward(rand_tex(rng, 128), rand_pose(rng))
        assert beta.data.min() >= 0.02 - 1e-7
        assert beta.data.max() <= 1.0

    def test_pose_reaches_bottleneck(self, model128, rng):
        tex = rand_tex(rng, 128)
        d1, _ = model128.geometry_forward(tex, rand_pose(rng))
        d2, _ = model128.geometry_forward(tex, rand_pose(rng))
        assert np.abs(d1.data - d2.data).max() > 0


class TestNonlinearBranch:
    def test_layer_extents_double(self, model128, rng):
        feats = model128.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        assert len(feats) == 7
        for j, f in enumerate(feats):
            expect = 128 >> (6 - j)
            assert f.shape[1:] == (expect, expect)
            assert f.shape[0] == M.FUSION_CHANNELS[j + 1]

    def test_deterministic(self, model128, rng):
        tex, pose = rand_tex(rng, 128), rand_pose(rng)
        a = model128.nonlinear(tex, pose)
        b = model128.nonlinear(tex, pose)
        for x, y in zip(a, b):
            assert np.array_equal(x.data, y.data)

    def test_zero_inputs_nonzero_outputs(self, model128):
        feats = model128.nonlinear(Tensor(np.zeros((3, 128, 128), np.float32)),
                                   Tensor(np.zeros(48, np.float32)))
        assert any(np.abs(f.data).max() > 0 for f in feats)


class TestLinearBranch:
    def test_no_bias_parameters_exist(self, model128):
        names = [n for n in model128.named_params() if n.startswith("linear.")]
        assert names
        assert not [n for n in names if n.endswith(".bias")]

    def test_zero_features_zero_output(self, model128, rng):
        nl = model128.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        gain, bias, _ = model128.linear(Tensor(np.zeros((6, 128, 128), np.float32)), nl)
        assert np.all(gain.data == 0.0)
        assert np.all(bias.data == 0.0)

    def test_linearity_over_features(self, model128, rng):
        nl = model128.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        for _ in range(10):
            f1 = rng.random((6, 128, 128), dtype=np.float32)
            f2 = rng.random((6, 128, 128), dtype=np.float32)
            a, b = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2))
            g_mix, b_mix, _ = model128.linear(Tensor(a * f1 + b * f2), nl)
            g1, b1, _ = model128.linear(Tensor(f1), nl)
            g2, b2, _ = model128.linear(Tensor(f2), nl)
            ref_g = a * g1.data + b * g2.data
            ref_b = a * b1.data + b * b2.data
            scale_g = max(np.abs(ref_g).max(), 1e-6)
            assert np.abs(g_mix.data - ref_g).max() / scale_g < 1e-4
            scale_b = max(np.abs(ref_b).max(), 1e-6)
            assert np.abs(b_mix.data - ref_b).max() / scale_b < 1e-4

    def test_nonlinear_mode_breaks_additivity(self, rng):
        model = M.RelightModel(resolution=128, pose_dim=48, mode="nonlinear", seed=3)
        nl = model.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        f1 = rng.standard_normal((6, 128, 128)).astype(np.float32)
        f2 = rng.standard_normal((6, 128, 128)).astype(np.float32)
        g_mix, _, _ = model.linear(Tensor(f1 + f2), nl)
        g1, _, _ = model.linear(Tensor(f1), nl)
        g2, _, _ = model.linear(Tensor(f2), nl)
        resid = np.abs(g_mix.data - g1.data - g2.data).max()
        assert resid / max(np.abs(g1.data + g2.data).max(), 1e-30) > 1e-2

    def test_wrong_nl_feature_count_rejected(self, model128, rng):
        nl = model128.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        with pytest.raises(ValueError, match="fusion"):
            model128.linear(Tensor(np.zeros((6, 128, 128), np.float32)), nl[:-1])

    def test_fusion_rule_matches_float64_mirror(self, rng):
        """Mirror the documented decoder rule in float64 and compare."""
        branch = M.LinearBranch(16, np.random.default_rng(5),
                                channels=(8, 8, 4), mode="linear", in_channels=6)
        nl = [Tensor(rng.random((8, 8, 8), dtype=np.float32)),
              Tensor(rng.random((4, 16, 16), dtype=np.float32))]
        feats = rng.random((6, 16, 16), dtype=np.float32)
        gain, bias, _ = branch(Tensor(feats), nl)

        e1 = oracles.conv2d_ref(feats, branch.enc[0].kernel.data, 2, 1)
        e2 = oracles.conv2d_ref(e1, branch.enc[1].kernel.data, 2, 1)
        d1 = oracles.conv_transpose2d_ref(e2, branch.dec[0].kernel.data, 2, 1)
        d1 = d1 / np.sqrt(2.0) * nl[0].data
        d2 = oracles.conv_transpose2d_ref(e1 + d1, branch.dec[1].kernel.data, 2, 1)
        d2 = d2 / np.sqrt(2.0) * nl[1].data
        assert max_rel_err(gain.data, d2[:3], floor=1e-3) < 1e-4
        assert max_rel_err(bias.data, d2[3:4], floor=1e-3) < 1e-4

    def test_fusion_scalar_sanity_sqrt2(self):
        """enc skip = 1, decoder state = 1, nl = 1, delta ConvT -> sqrt(2)."""
        branch = M.LinearBranch(4, np.random.default_rng(0),
                                channels=(2, 2, 4), mode="linear", in_channels=1)
        # enc convs average the 2x2 center taps so conv(ones) == ones
        for layer in branch.enc:
            k = np.zeros_like(layer.kernel.data)
            k[:, :, 1:3, 1:3] = 0.25 / k.shape[1]
            layer.kernel.data = k
        # dec0 makes the stage output exactly ones after the 1/sqrt(2)
        k0 = np.zeros_like(branch.dec[0].kernel.data)
        k0[:, :, 1:3, 1:3] = np.sqrt(2.0) / 2.0
        branch.dec[0].kernel.data = k0.astype(np.float32)
        # dec1 is a delta tap: output (0,0) reads fused channel 0 directly
        k1 = np.zeros_like(branch.dec[1].kernel.data)
        k1[0, :, 1, 1] = 1.0
        branch.dec[1].kernel.data = k1.astype(np.float32)

        ones_in = Tensor(np.ones((1, 4, 4), np.float32))
        nl = [Tensor(np.ones((2, 2, 2), np.float32)),
              Tensor(np.ones((4, 4, 4), np.float32))]
        gain, bias, _ = branch(ones_in, nl)
        # fused channel 0 at stage 1 is enc(1) + dec(1) = 2; 2/sqrt(2)=sqrt(2)
        assert gain.data[0, 0, 0] == pytest.approx(np.sqrt(2.0), rel=1e-6)
        assert bias.data[0, 0, 0] == pytest.approx(np.sqrt(2.0), rel=1e-6)


class TestMlpLinear:
    def test_forward_shapes_and_linearity(self, rng):
        model = M.RelightModel(resolution=128, pose_dim=48, mode="mlp-linear", seed=1)
        nl = model.nonlinear(rand_tex(rng, 128), rand_pose(rng))
        e1 = rng.random(3 * 16 * 32).astype(np.float32)
        e2 = rng.random(3 * 16 * 32).astype(np.float32)
        g1, _, _ = model.linear(Tensor(e1), nl)
        g2, _, _ = model.linear(Tensor(e2), nl)
        gm, _, _ = model.linear(Tensor(e1 + e2), nl)
        assert g1.data.shape == (3, 128, 128)
        scale = max(np.abs(g1.data + g2.data).max(), 1e-6)
        assert np.abs(gm.data - g1.data - g2.data).max() / scale < 1e-4


class TestComposeTexture:
    def test_zero_gain_zero_bias(self, rng):
        t = rand_tex(rng, 8)
        c = M.compose_texture(Tensor(np.zeros((3, 8, 8), np.float32)),
                              Tensor(np.zeros((1, 8, 8), np.float32)), t)
        assert np.all(c.data == 0.0)

    def test_unit_gain_returns_texture(self, rng):
        t = rand_tex(rng, 8)
        c = M.compose_texture(Tensor(np.ones((3, 8, 8), np.float32)),
                              Tensor(np.zeros((1, 8, 8), np.float32)), t)
        assert np.array_equal(c.data, t.data)

    def test_unit_bias_gives_sigma_t(self, rng):
        t = rand_tex(rng, 8)
        c = M.compose_texture(Tensor(np.zeros((3, 8, 8), np.float32)),
                              Tensor(np.ones((1, 8, 8), np.float32)), t)
        assert np.all(c.data == 64.0)

    def test_sigma_zero_removes_bias(self, rng):
        t = rand_tex(rng, 8)
        b = Tensor(rng.random((1, 8, 8), dtype=np.float32))
        c0 = M.compose_texture(Tensor(np.ones((3, 8, 8), np.float32)), b, t, sigma_t=0.0)
        assert np.array_equal(c0.data, t.data)


class TestCheckpointing:
    def test_save_load_round_trip(self, tmp_path, rng):
        model = M.RelightModel(resolution=128, pose_dim=48, mode="linear", seed=11)
        p = tmp_path / "model.ckpt"
        model.save(p, extra_header={"iteration": "42"})
        back, header, extra = M.RelightModel.load(p)
        assert header["mode"] == "linear"
        assert header["iteration"] == "42"
        a = model.named_params()
        b = back.named_params()
        assert set(a) == set(b)
        for k in a:
            assert np.array_equal(a[k].data, b[k].data), k
        # identical outputs after reload
        tex, pose = rand_tex(rng, 128), rand_pose(rng)
        feats = Tensor(rng.random((6, 128, 128), dtype=np.float32))
        c1 = model.neural_texture(tex, pose, feats)[0]
        c2 = back.neural_texture(tex, pose, feats)[0]
        assert np.array_equal(c1.data, c2.data)

    def test_mode_round_trips(self, tmp_path):
        for mode in M.MODES:
            model = M.RelightModel(resolution=128, mode=mode, seed=2)
            p = tmp_path / f"{mode}.ckpt"
            model.save(p)
            back, header, _ = M.RelightModel.load(p)
            assert back.mode == mode
