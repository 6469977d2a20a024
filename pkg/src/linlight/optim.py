"""Adam with bias correction, plus the multistep learning-rate schedule."""

from typing import Dict, Optional

import numpy as np

from .tensor import Tensor


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, Optional[np.ndarray]],
              state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``state`` carries per-parameter first/second moments under 'm'/'v' and a
    shared step counter 'step'.
    """
    if state.get("step") is None:
        state["step"] = 0
        state["m"] = {k: np.zeros_like(p) for k, p in params.items()}
        state["v"] = {k: np.zeros_like(p) for k, p in params.items()}
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


class Adam:
    """Adam over a named dict of Tensors; lr is mutable for scheduling."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        data = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(data, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def state_arrays(self, prefix: str = "opt.") -> Dict[str, np.ndarray]:
        out = {}
        if self.state.get("step") is not None:
            out[prefix + "step"] = np.array([self.state["step"]], dtype=np.float32)
            for k in self.params:
                out[prefix + k + ".m"] = self.state["m"][k]
                out[prefix + k + ".v"] = self.state["v"][k]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "opt.") -> None:
        if prefix + "step" not in arrays:
            return
        self.state = {
            "step": int(arrays[prefix + "step"][0]),
            "m": {k: arrays[prefix + k + ".m"].copy() for k in self.params},
            "v": {k: arrays[prefix + k + ".v"].copy() for k in self.params},
        }


def multistep_lr(base_lr: float, iteration: int, total: int,
                 milestones=(0.6, 0.9), gamma: float = 0.3) -> float:
    """Step decay by ``gamma`` at the given fractions of the budget."""
    lr = base_lr
    for frac in milestones:
        if iteration >= frac * total:
            lr *= gamma
    return lr
