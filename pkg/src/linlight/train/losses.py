"""Training losses on the autodiff graph.

Total objective: lambda_img * reconstruction + lambda_gan * adversarial
+ lambda_reg * L1 on the linear encoder features.  Reconstruction is a
masked L1 over a 3-level image pyramid (the perceptual term is replaced by
the coarser pyramid levels; no pretrained backbone at desk scale).
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

PYRAMID_LEVELS = 3


@dataclass
class LossWeights:
    lambda_img: float = 1.0
    lambda_gan: float = 0.01
    lambda_reg: float = 0.01

    def __post_init__(self):
        if min(self.lambda_img, self.lambda_gan, self.lambda_reg) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossCounters:
    empty_mask: int = 0
    aborted_steps: int = 0
    history: Dict[str, List[float]] = field(default_factory=dict)


def masked_pyramid_l1(pred: Tensor, gt: np.ndarray, mask: np.ndarray,
                      counters: LossCounters = None,
                      levels: int = PYRAMID_LEVELS):
    """Masked MAE at full resolution plus L1 at the coarser pyramid levels.

    Returns (total Tensor, [per-level floats]).  Empty mask gives a zero loss
    and bumps the warning counter.
    """
    maskf = mask.astype(np.float32)[None]
    msum = float(maskf.sum())
    if msum == 0.0:
        if counters is not None:
            counters.empty_mask += 1
        return Tensor(np.zeros((), np.float32)), [0.0] * levels
    gt_t = Tensor(np.ascontiguousarray(gt))
    mk = Tensor(maskf)
    pm = T.mul(pred, mk)
    gm = T.mul(gt_t, mk)
    total = None
    parts = []
    for lv in range(levels):
        if lv > 0:
            pm = T.avg_pool2d(pm, 2)
            gm = T.avg_pool2d(gm, 2)
            msum /= 4.0
        term = T.scale(T.tsum(T.absval(T.sub(pm, gm))),
                       1.0 / (3.0 * max(msum, 1.0)))
        parts.append(float(term.data))
        total = term if total is None else T.add(total, term)
    return total, parts


def l1_feature_reg(enc_feats: List[Tensor]) -> Tensor:
    """Sum over layers of mean |feature| (element-count normalized)."""
    total = None
    for f in enc_feats:
        term = T.scale(T.tsum(T.absval(f)), 1.0 / f.data.size)
        total = term if total is None else T.add(total, term)
    if total is None:
        return Tensor(np.zeros((), np.float32))
    return total


def hinge_d_loss(real_scores: List[Tensor], fake_scores: List[Tensor]) -> Tensor:
    """mean(relu(1 - D(real))) + mean(relu(1 + D(fake))), averaged over
    scales."""
    total = None
    for r, f in zip(real_scores, fake_scores):
        lr = T.tmean(T.relu(T.add_scalar(T.neg(r), 1.0)))
        lf = T.tmean(T.relu(T.add_scalar(f, 1.0)))
        term = T.add(lr, lf)
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(real_scores))


def hinge_g_loss(fake_scores: List[Tensor]) -> Tensor:
    """-mean(D(fake)), averaged over scales."""
    total = None
    for f in fake_scores:
        term = T.neg(T.tmean(f))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(fake_scores))


def total_loss(parts: Dict[str, Tensor], weights: LossWeights) -> Tensor:
    """lambda_img * img + lambda_gan * gan + lambda_reg * reg."""
    total = T.scale(parts["img"], weights.lambda_img)
    if "gan" in parts and weights.lambda_gan > 0:
        total = T.add(total, T.scale(parts["gan"], weights.lambda_gan))
    if "reg" in parts and weights.lambda_reg > 0:
        total = T.add(total, T.scale(parts["reg"], weights.lambda_reg))
    return total


def linearity_consistency(linear_branch, nl_feats: List[Tensor],
                          f1: Tensor, f2: Tensor,
                          a1: float, a2: float) -> Tensor:
    """|| a1*f(F1) + a2*f(F2) - f(a1*F1 + a2*F2) ||_2 over the gain/bias
    output (the regularizer the linearity-consistency ablation trains with)."""
    g1, b1, _ = linear_branch(f1, nl_feats)
    g2, b2, _ = linear_branch(f2, nl_feats)
    mixed = T.add(T.scale(f1, a1), T.scale(f2, a2))
    gm, bm, _ = linear_branch(mixed, nl_feats)
    dg = T.sub(T.add(T.scale(g1, a1), T.scale(g2, a2)), gm)
    db = T.sub(T.add(T.scale(b1, a1), T.scale(b2, a2)), bm)
    sq = T.add(T.tsum(T.mul(dg, dg)), T.tsum(T.mul(db, db)))
    return T.sqrt(T.add_scalar(sq, 1e-20))
