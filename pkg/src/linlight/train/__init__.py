from .disc import MultiScaleDiscriminator
from .loop import (FrameCache, Sample, TrainConfig, evaluate, fit,
                   forward_sample, render_from_parts, render_inference,
                   train_step)
from .losses import (LossCounters, LossWeights, hinge_d_loss, hinge_g_loss,
                     l1_feature_reg, linearity_consistency, masked_pyramid_l1,
                     total_loss)
from .metrics import psnr, ssim

__all__ = [
    "MultiScaleDiscriminator", "FrameCache", "Sample", "TrainConfig",
    "evaluate", "fit", "forward_sample", "render_from_parts",
    "render_inference", "train_step", "LossCounters", "LossWeights",
    "hinge_d_loss", "hinge_g_loss", "l1_feature_reg", "linearity_consistency",
    "masked_pyramid_l1", "total_loss", "psnr", "ssim",
]
