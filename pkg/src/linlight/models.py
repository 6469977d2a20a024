"""The relighting networks.

Three branches share one parameter convention (name -> Tensor dicts):

* ``GeometryNet`` (prefix ``geo.``): biased U-Net from the mean texture with
  the pose injected at the bottleneck; two output channels, raw displacement
  and raw roughness.
* ``NonlinearBranch`` (prefix ``nl.``): biased, LeakyReLU-activated stack of
  transposed convs conditioned on mean texture + pose; exposes every layer's
  output for the fusion.
* ``LinearBranch`` (prefix ``linear.``): the lighting path.  Strictly no bias
  and no activation in 'linear' mode, so the map from shading features to the
  gain/bias output is exactly linear; 'nonlinear' mode adds LeakyReLU after
  every layer (ablation).  Decoder stage j computes
      dec_{j+1} = (1/sqrt(2)) * ConvT(enc_skip_j + dec_j) * nl_j
  with dec_0 = 0, and the final 4 channels split into gain (3) and bias (1).

The final texture is gain * T + bias * SIGMA_T.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, Dense
from .tensor import Tensor

FUSION_CHANNELS = (128, 256, 128, 128, 64, 32, 16, 4)
GEO_ENC_CHANNELS = (3, 64, 64, 64, 64, 64, 64)
GEO_DEC_CHANNELS = (64, 64, 64, 64, 64, 64, 2)
POSE_FEATURE_CHANNELS = 16
SIGMA_T = 64.0
LEAKY_SLOPE = 0.2
ENV_GRID = (16, 32)     # holistic env input of the mlp-linear ablation

MODES = ("linear", "nonlinear", "linearity-consistency", "mlp-linear")


def _branch_mode(mode: str) -> str:
    """Network shape implied by a training mode."""
    if mode in ("linear", "mlp-linear"):
        return mode
    return "nonlinear"


class GeometryNet:
    """U-Net predicting (raw displacement, raw roughness) from (T, pose)."""

    def __init__(self, resolution: int, pose_dim: int,
                 rng: np.random.Generator):
        self.resolution = resolution
        self.pose_dim = pose_dim
        depth = len(GEO_ENC_CHANNELS) - 1
        if resolution % (1 << depth):
            raise ValueError(f"geometry net needs resolution divisible by {1 << depth}")
        self.enc = [Conv2d(GEO_ENC_CHANNELS[i], GEO_ENC_CHANNELS[i + 1], 3,
                           stride=2, padding=1, bias=True, rng=rng)
                    for i in range(depth)]
        self.pose_proj = Dense(pose_dim, POSE_FEATURE_CHANNELS, bias=True, rng=rng)
        self.dec = []
        for i in range(depth):
            cin = GEO_ENC_CHANNELS[-1] + POSE_FEATURE_CHANNELS if i == 0 \
                else GEO_DEC_CHANNELS[i] + (GEO_ENC_CHANNELS[-1] if i < depth else 0)
            self.dec.append(ConvTranspose2d(cin, GEO_DEC_CHANNELS[i + 1], 3,
                                            stride=1, padding=1, bias=True, rng=rng))

    def named_params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.enc):
            out.update(layer.named(f"geo.enc.{i}"))
        out.update(self.pose_proj.named("geo.pose"))
        for i, layer in enumerate(self.dec):
            out.update(layer.named(f"geo.dec.{i}"))
        return out

    def __call__(self, tex: Tensor, pose: Tensor):
        """tex (3,R,R) in [0,1], pose (pose_dim,) -> (raw_disp, raw_rough)."""
        skips = []
        x = tex
        for layer in self.enc:
            x = T.leaky_relu(layer(x), LEAKY_SLOPE)
            skips.append(x)
        s = x.shape[1]
        theta = T.reshape(self.pose_proj(pose), (POSE_FEATURE_CHANNELS, 1, 1))
        x = T.concat([x, T.tile_spatial(theta, s, s)], axis=0)
        depth = len(self.dec)
        for i, layer in enumerate(self.dec):
            x = T.upsample_bilinear2x(layer(x))
            if i < depth - 1:
                x = T.leaky_relu(x, LEAKY_SLOPE)
                x = T.concat([x, skips[depth - 2 - i]], axis=0)
        raw_disp = T.slice_axis0(x, 0, 1)
        raw_rough = T.slice_axis0(x, 1, 2)
        return raw_disp, raw_rough


class NonlinearBranch:
    """Pose- and identity-conditioned feature pyramid (biased, activated)."""

    def __init__(self, resolution: int, pose_dim: int, rng: np.random.Generator,
                 channels: Sequence[int] = FUSION_CHANNELS):
        self.resolution = resolution
        self.pose_dim = pose_dim
        self.channels = tuple(channels)
        self.stages = len(self.channels) - 1
        if resolution % (1 << self.stages):
            raise ValueError(
                f"nonlinear branch needs resolution divisible by {1 << self.stages}")
        self.bottleneck = resolution >> self.stages
        self.pose_proj = Dense(pose_dim, POSE_FEATURE_CHANNELS, bias=True, rng=rng)
        self.joint = Conv2d(3 + POSE_FEATURE_CHANNELS, self.channels[0], 3,
                            stride=1, padding=1, bias=True, rng=rng)
        self.layers = [ConvTranspose2d(self.channels[i], self.channels[i + 1], 4,
                                       stride=2, padding=1, bias=True, rng=rng)
                       for i in range(self.stages)]

    def named_params(self) -> Dict[str, Tensor]:
        out = self.pose_proj.named("nl.pose")
        out.update(self.joint.named("nl.joint"))
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"nl.dec.{i}"))
        return out

    def __call__(self, tex: Tensor, pose: Tensor) -> List[Tensor]:
        """Per-layer features; layer j doubles the spatial extent of j-1."""
        pooled = T.avg_pool2d(tex, self.resolution // self.bottleneck)
        theta = T.reshape(self.pose_proj(pose), (POSE_FEATURE_CHANNELS, 1, 1))
        tiled = T.tile_spatial(theta, self.bottleneck, self.bottleneck)
        x = T.leaky_relu(self.joint(T.concat([pooled, tiled], axis=0)), LEAKY_SLOPE)
        feats = []
        for layer in self.layers:
            x = T.leaky_relu(layer(x), LEAKY_SLOPE)
            feats.append(x)
        return feats


class LinearBranch:
    """The lighting network: encoder + fused decoder over shading features.

    In 'linear' mode every parameter tensor is a conv kernel (no bias vectors
    exist anywhere) and no activation is applied, so the whole branch is an
    exactly linear map of its 6-channel input.
    """

    def __init__(self, resolution: int, rng: np.random.Generator,
                 channels: Sequence[int] = FUSION_CHANNELS, mode: str = "linear",
                 in_channels: int = 6):
        if mode not in ("linear", "nonlinear"):
            raise ValueError(f"linear branch mode must be linear|nonlinear, got {mode}")
        self.mode = mode
        self.resolution = resolution
        self.channels = tuple(channels)
        self.stages = len(self.channels) - 1
        if resolution % (1 << self.stages):
            raise ValueError(
                f"linear branch needs resolution divisible by {1 << self.stages}")
        enc_channels = [in_channels] + [self.channels[self.stages - k]
                                        for k in range(1, self.stages + 1)]
        self.enc = [Conv2d(enc_channels[i], enc_channels[i + 1], 4,
                           stride=2, padding=1, bias=False, rng=rng)
                    for i in range(self.stages)]
        self.dec = [ConvTranspose2d(self.channels[i], self.channels[i + 1], 4,
                                    stride=2, padding=1, bias=False, rng=rng)
                    for i in range(self.stages)]
        self.inv_sqrt2 = float(1.0 / np.sqrt(2.0))

    def named_params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.enc):
            out.update(layer.named(f"linear.enc.{i}"))
        for i, layer in enumerate(self.dec):
            out.update(layer.named(f"linear.dec.{i}"))
        return out

    def _act(self, x: Tensor) -> Tensor:
        return T.leaky_relu(x, LEAKY_SLOPE) if self.mode == "nonlinear" else x

    def __call__(self, features: Tensor, nl_feats: List[Tensor]):
        """features (6,R,R); nl_feats from the nonlinear branch (treated as
        constants w.r.t. lighting).  Returns (gain, bias, enc_features)."""
        if len(nl_feats) != self.stages:
            raise ValueError(
                f"fusion needs {self.stages} nonlinear features, got {len(nl_feats)}")
        skips = []
        x = features
        for layer in self.enc:
            x = self._act(layer(x))
            skips.append(x)
        dec: Optional[Tensor] = None
        for j, layer in enumerate(self.dec):
            skip = skips[self.stages - 1 - j]
            fused = skip if dec is None else T.add(skip, dec)
            if fused.shape[1:] != (
                    self.resolution >> (self.stages - j),) * 2:
                raise ValueError(
                    f"fusion stage {j}: encoder feature {skip.shape} does not "
                    f"match decoder state (architecture bug)")
            up = T.scale(layer(fused), self.inv_sqrt2)
            if up.shape != nl_feats[j].shape:
                raise ValueError(
                    f"fusion stage {j}: modulation shape {nl_feats[j].shape} "
                    f"!= decoder shape {up.shape}")
            dec = self._act(T.mul(up, nl_feats[j]))
        gain = T.slice_axis0(dec, 0, 3)
        bias = T.slice_axis0(dec, 3, 4)
        return gain, bias, skips


class MlpLinearBranch:
    """Ablation: holistic lighting via one unbiased dense layer.

    The environment grid (3 x 16 x 32) is flattened, mapped by a single
    bias-free matrix to the decoder bottleneck, and decoded with the same
    fused stack; there are no spatially varying encoder skips.
    """

    def __init__(self, resolution: int, rng: np.random.Generator,
                 channels: Sequence[int] = FUSION_CHANNELS,
                 env_grid=ENV_GRID):
        self.mode = "mlp-linear"
        self.resolution = resolution
        self.channels = tuple(channels)
        self.stages = len(self.channels) - 1
        self.env_grid = tuple(env_grid)
        self.bottleneck = resolution >> self.stages
        n_in = 3 * env_grid[0] * env_grid[1]
        n_out = self.channels[0] * self.bottleneck * self.bottleneck
        self.proj = Dense(n_in, n_out, bias=False, rng=rng)
        self.dec = [ConvTranspose2d(self.channels[i], self.channels[i + 1], 4,
                                    stride=2, padding=1, bias=False, rng=rng)
                    for i in range(self.stages)]
        self.inv_sqrt2 = float(1.0 / np.sqrt(2.0))

    def named_params(self) -> Dict[str, Tensor]:
        out = self.proj.named("linear.mlp")
        for i, layer in enumerate(self.dec):
            out.update(layer.named(f"linear.dec.{i}"))
        return out

    def __call__(self, env_flat: Tensor, nl_feats: List[Tensor]):
        x = T.reshape(self.proj(env_flat),
                      (self.channels[0], self.bottleneck, self.bottleneck))
        for j, layer in enumerate(self.dec):
            x = T.mul(T.scale(layer(x), self.inv_sqrt2), nl_feats[j])
        return T.slice_axis0(x, 0, 3), T.slice_axis0(x, 3, 4), []


def compose_texture(gain: Tensor, bias: Tensor, tex: Tensor,
                    sigma_t: float = SIGMA_T) -> Tensor:
    """Final texture: gain * T + bias * sigma_t."""
    return T.add(T.mul(gain, tex), T.scale(bias, sigma_t))


def compose_texture_np(gain: np.ndarray, bias: np.ndarray, tex: np.ndarray,
                       sigma_t: float = SIGMA_T) -> np.ndarray:
    return (gain * tex + bias * sigma_t).astype(np.float32)


class RelightModel:
    """The full bundle: geometry net + neural branches + hyperparameters."""

    def __init__(self, resolution: int = 256, pose_dim: int = 48,
                 mode: str = "linear", seed: int = 0,
                 channels: Sequence[int] = FUSION_CHANNELS):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        rng = np.random.default_rng(seed)
        self.mode = mode
        self.resolution = resolution
        self.pose_dim = pose_dim
        self.channels = tuple(channels)
        self.sigma_t = SIGMA_T
        self.geometry = GeometryNet(resolution, pose_dim, rng)
        self.nonlinear = NonlinearBranch(resolution, pose_dim, rng, channels)
        if mode == "mlp-linear":
            self.linear = MlpLinearBranch(resolution, rng, channels)
        else:
            self.linear = LinearBranch(resolution, rng, channels,
                                       mode=_branch_mode(mode))

    def named_params(self) -> Dict[str, Tensor]:
        out = self.geometry.named_params()
        out.update(self.nonlinear.named_params())
        out.update(self.linear.named_params())
        return out

    def header(self) -> Dict[str, str]:
        return {
            "arch": "relight-v1",
            "mode": self.mode,
            "resolution": str(self.resolution),
            "pose_dim": str(self.pose_dim),
            "channels": ",".join(str(c) for c in self.channels),
            "sigma_t": str(self.sigma_t),
        }

    def save(self, path, extra_header: Optional[Dict[str, str]] = None,
             extra_arrays: Optional[Dict[str, np.ndarray]] = None) -> None:
        from .checkpoint import save_checkpoint
        arrays = {k: v.data for k, v in self.named_params().items()}
        if extra_arrays:
            arrays.update(extra_arrays)
        header = self.header()
        if extra_header:
            header.update(extra_header)
        save_checkpoint(path, arrays, header)

    @staticmethod
    def load(path):
        """Instantiate from a self-describing checkpoint.

        Returns (model, header, extra_arrays) where extra_arrays holds any
        non-model records (optimizer state etc.).
        """
        from .checkpoint import load_checkpoint
        from .nn import load_params
        arrays, header = load_checkpoint(path)
        model = RelightModel(
            resolution=int(header["resolution"]),
            pose_dim=int(header["pose_dim"]),
            mode=header["mode"],
            channels=tuple(int(c) for c in header["channels"].split(",")),
        )
        named = model.named_params()
        load_params(named, arrays)
        extra = {k: v for k, v in arrays.items() if k not in named}
        return model, header, extra

    # -- forward helpers -----------------------------------------------------

    def geometry_forward(self, tex: Tensor, pose: Tensor):
        """(raw displacement, clamped roughness in (0,1)->[0.02,1])."""
        from .shading import clamp_beta_t
        raw_disp, raw_rough = self.geometry(tex, pose)
        return raw_disp, clamp_beta_t(T.sigmoid(raw_rough))

    def lighting_input(self, features: Tensor, lights=None) -> Tensor:
        """What the lighting path consumes: texel features, or the flattened
        env grid for the mlp-linear ablation."""
        if self.mode != "mlp-linear":
            return features
        from .shading import lights_to_env
        env = lights_to_env(lights, *self.linear.env_grid)
        return Tensor(env.radiance.transpose(2, 0, 1).reshape(-1).copy())

    def neural_texture(self, tex: Tensor, pose: Tensor, lighting: Tensor):
        """Gain/bias prediction and final composed texture (3,R,R)."""
        nl_feats = self.nonlinear(tex, pose)
        gain, bias, enc_feats = self.linear(lighting, nl_feats)
        return compose_texture(gain, bias, tex, self.sigma_t), gain, bias, enc_feats
