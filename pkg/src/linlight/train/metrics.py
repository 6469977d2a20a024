"""Mask-restricted image metrics (plain numpy, float64)."""

import numpy as np

PSNR_CAP_DB = 100.0
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 1.0


def psnr(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """10*log10(MAX^2/MSE) over mask pixels, MAX = 1, capped at 100 dB."""
    m = np.asarray(mask, bool)
    if not m.any():
        return PSNR_CAP_DB
    diff = (pred.astype(np.float64) - gt.astype(np.float64))[m]
    mse = float(np.mean(diff * diff))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter2d(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable same-size filtering with zero padding."""
    pad = len(k) // 2
    out = np.zeros_like(img)
    tmp = np.pad(img, ((pad, pad), (0, 0)), mode="constant")
    for i, w in enumerate(k):
        out += w * tmp[i:i + img.shape[0], :]
    tmp = np.pad(out, ((0, 0), (pad, pad)), mode="constant")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * tmp[:, i:i + img.shape[1]]
    return out


def ssim(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5), standard constants.

    Background pixels are zeroed on both sides before filtering and the SSIM
    map is averaged over mask pixels only, so content outside the mask can
    never change the score.
    """
    m = np.asarray(mask, bool)
    if not m.any():
        return 1.0
    a = pred.astype(np.float64) * m[..., None]
    b = gt.astype(np.float64) * m[..., None]
    k = _gaussian_kernel()
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x = _filter2d(x, k)
        mu_y = _filter2d(y, k)
        xx = _filter2d(x * x, k) - mu_x * mu_x
        yy = _filter2d(y * y, k) - mu_y * mu_y
        xy = _filter2d(x * y, k) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)
             / ((mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)))
        vals.append(float(s[m].mean()))
    return float(np.mean(vals))
