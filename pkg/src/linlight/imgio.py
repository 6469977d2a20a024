"""Image IO: PFM for linear-light float data, PNG for tone-mapped previews.

PFM follows the standard layout: ``PF``/``Pf`` header, width/height line,
scale line whose sign encodes endianness (negative = little-endian), then
rows bottom-to-top.  PNG previews are gamma-2.2 encoded on write; they are
for eyeballs only and never feed back into metrics.
"""

import numpy as np


def write_pfm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        header = b"Pf\n"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"PFM wants (H,W) or (H,W,3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h * channels), dtype=dtype)
    img = data.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.ascontiguousarray(img[::-1]).astype(np.float32)


def linear_to_srgb(img: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Gamma-2.2 encode to uint8."""
    out = np.clip(np.asarray(img, np.float64) * exposure, 0.0, 1.0) ** (1.0 / 2.2)
    return (out * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray, exposure: float = 1.0) -> None:
    from PIL import Image
    u8 = linear_to_srgb(img, exposure)
    mode = "RGB" if u8.ndim == 3 else "L"
    Image.fromarray(u8, mode=mode).save(path)
