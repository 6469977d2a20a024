"""Binary checkpoint container.

Layout (all integers little-endian uint32, floats little-endian float32):

    magic            4 bytes, b"LLM1"
    header_len       u32
    header           UTF-8 text, "key=value" lines (self-describing hyperparams)
    n_records        u32
    per record:
        name_len     u32
        name         UTF-8
        rank         u32
        extents      u32 * rank
        payload      f32 * prod(extents), raw

Records are written in sorted-name order so identical parameter sets produce
byte-identical files.  Round-trips are bit-exact.
"""

import struct
from typing import Dict, Tuple

import numpy as np

MAGIC = b"LLM1"


def save_checkpoint(path, arrays: Dict[str, np.ndarray], header: Dict[str, str]) -> None:
    htext = "".join(f"{k}={v}\n" for k, v in sorted(header.items())).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(htext)))
        fh.write(htext)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f4")  # asarray keeps rank 0
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a LLM1 checkpoint (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header: Dict[str, str] = {}
        for line in fh.read(hlen).decode("utf-8").splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                header[k] = v
        (n,) = struct.unpack("<I", fh.read(4))
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(n):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            buf = fh.read(4 * count)
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return arrays, header
