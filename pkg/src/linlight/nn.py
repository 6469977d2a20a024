"""Thin layer containers over the tensor ops.

Kernels initialize uniform in [-s, s] with s = sqrt(1 / (C_in * k^2)) (fan-in
scaling); biases start at zero.  Layers expose their parameters as a flat
name->Tensor dict so checkpoints and audits can scan them by name.
"""

from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _uniform(rng: np.random.Generator, shape, s: float) -> np.ndarray:
    return rng.uniform(-s, s, size=shape).astype(np.float32)


class Conv2d:
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 padding: int = 0, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        s = float(np.sqrt(1.0 / (cin * k * k)))
        self.kernel = Tensor(_uniform(rng, (cout, cin, k, k), s), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (cout,), s), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.stride, self.padding, self.bias)

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out = {prefix + ".kernel": self.kernel}
        if self.bias is not None:
            out[prefix + ".bias"] = self.bias
        return out


class ConvTranspose2d:
    """Layer view of conv_transpose2d: kernel stored as (in_ch, out_ch, k, k)."""

    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 padding: int = 0, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        s = float(np.sqrt(1.0 / (cin * k * k)))
        self.kernel = Tensor(_uniform(rng, (cin, cout, k, k), s), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (cout,), s), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.kernel, self.stride, self.padding, self.bias)

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out = {prefix + ".kernel": self.kernel}
        if self.bias is not None:
            out[prefix + ".bias"] = self.bias
        return out


class Dense:
    def __init__(self, nin: int, nout: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        s = float(np.sqrt(1.0 / nin))
        self.weight = Tensor(_uniform(rng, (nout, nin), s), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (nout,), s), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.matvec(self.weight, x, self.bias)

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out = {prefix + ".weight": self.weight}
        if self.bias is not None:
            out[prefix + ".bias"] = self.bias
        return out


def load_params(named: Dict[str, Tensor], arrays: Dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameters, shape-checked."""
    for name, p in named.items():
        if name not in arrays:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ValueError(
                f"parameter {name!r}: checkpoint shape {arr.shape} != model {p.data.shape}")
        p.data = arr.astype(np.float32).copy()
