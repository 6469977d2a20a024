"""Lighting-aware multi-scale patch discriminator.

Each scale is a small strided conv stack over the 9-channel concatenation of
the image with its Phong diffuse/specular conditioning maps {A, S}; the
conditioning tells the critic what the illumination looked like, so partially
lit frames are judged against the right lighting prompt.
"""

from typing import Dict, List

import numpy as np

from .. import tensor as T
from ..nn import Conv2d
from ..tensor import Tensor

SCALES = (1, 2, 4)
LEAKY = 0.2


class PatchDiscriminator:
    def __init__(self, rng: np.random.Generator, in_channels: int = 9):
        chans = (in_channels, 32, 64, 64)
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1,
                             bias=True, rng=rng) for i in range(3)]
        self.head = Conv2d(64, 1, 3, stride=1, padding=1, bias=True, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = T.leaky_relu(conv(x), LEAKY)
        return self.head(x)

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.named(f"{prefix}.conv.{i}"))
        out.update(self.head.named(f"{prefix}.head"))
        return out


class MultiScaleDiscriminator:
    """One patch critic per scale (full, 1/2, 1/4)."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.scales = SCALES
        self.nets = [PatchDiscriminator(rng) for _ in self.scales]

    def named_params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for s, net in zip(self.scales, self.nets):
            out.update(net.named(f"disc.s{s}"))
        return out

    def __call__(self, image: Tensor, cond_a: Tensor, cond_s: Tensor) -> List[Tensor]:
        x = T.concat([image, cond_a, cond_s], axis=0)
        scores = []
        for s, net in zip(self.scales, self.nets):
            xin = x if s == 1 else T.avg_pool2d(x, s)
            scores.append(net(xin))
        return scores
