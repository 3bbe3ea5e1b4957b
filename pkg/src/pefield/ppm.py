"""Binary PPM (P6) images and raw float32 depth rasters.

Images are float arrays in [0, 1] of shape (height, width, 3). PPM holds
8-bit channels, so writers quantize by round-half-up and readers return
k / 255 values; arrays produced by the renderer are already quantized and
round-trip bit-exactly. Depth rasters are little-endian float32 with a
16-byte header: magic "PEFD", uint32 width, uint32 height, 4 reserved bytes.
Invalid depth pixels are stored as NaN.
"""

import struct

import numpy as np

from .geometry import DepthMap

DEPTH_MAGIC = b"PEFD"


def quantize(image: np.ndarray) -> np.ndarray:
    """Round-half-up to 8-bit levels, returned as floats k/255 in [0, 1]."""
    levels = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5)
    return levels / 255.0


def write_ppm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    levels = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(levels.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"not a binary PPM (P6) file: {path}")
        dims = f.readline().split()
        maxval = f.readline().strip()
        if len(dims) != 2 or maxval != b"255":
            raise ValueError(f"unsupported PPM header in {path}")
        w, h = int(dims[0]), int(dims[1])
        raw = f.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise ValueError(f"truncated PPM payload in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_depth(depth: DepthMap, path) -> None:
    values = np.where(depth.valid, depth.values, np.nan).astype("<f4")
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", depth.width, depth.height))
        f.write(b"\x00\x00\x00\x00")
        f.write(values.tobytes())


def read_depth(path) -> DepthMap:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != DEPTH_MAGIC:
            raise ValueError(f"not a {DEPTH_MAGIC.decode()} depth raster: {path}")
        w, h = struct.unpack("<II", header[4:12])
        raw = f.read(w * h * 4)
        if len(raw) != w * h * 4:
            raise ValueError(f"truncated depth payload in {path}")
    values = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(values=np.where(valid, values, np.nan), valid=valid)
