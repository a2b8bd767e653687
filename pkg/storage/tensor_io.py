"""
Tensor and image files.

FT1 layout: magic b"FT1\\0", little-endian u32 rank, rank little-endian u32 extents,
then the row-major little-endian f32 payload.
"""
import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from app.errors import InputError

logger = logging.getLogger(__name__)

MAGIC = b"FT1\x00"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def write_ft1(path, array) -> Path:
    path = Path(path)
    array = np.ascontiguousarray(np.asarray(array, dtype=_F32))
    header = MAGIC + struct.pack("<I", array.ndim) + np.asarray(array.shape, dtype=_U32).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + array.tobytes())
    return path


def read_ft1(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"FT1 file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise InputError(f"{path}: bad magic {raw[:4]!r}, not an FT1 file")
    if len(raw) < 8:
        raise InputError(f"{path}: truncated FT1 header")
    (rank,) = struct.unpack("<I", raw[4:8])
    offset = 8 + 4 * rank
    if len(raw) < offset:
        raise InputError(f"{path}: truncated FT1 extents")
    shape = tuple(int(v) for v in np.frombuffer(raw[8:offset], dtype=_U32))
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != offset + 4 * count:
        raise InputError(f"{path}: payload size {len(raw) - offset} does not match shape {shape}")
    return np.frombuffer(raw[offset:], dtype=_F32).reshape(shape).astype(np.float32)


def write_mask_png(path, mask) -> Path:
    """8-bit grayscale, pixel = round(m * 255)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise InputError(f"mask PNG needs an H x W array, got {mask.shape}")
    pixels = np.rint(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


def read_mask_png(path) -> np.ndarray:
    with Image.open(_existing(path)) as img:
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def write_heatmap_png(path, values) -> Path:
    """Min-max normalised grayscale rendering; a constant map renders black."""
    values = np.asarray(values, dtype=np.float64)
    span = values.max() - values.min()
    scaled = (values - values.min()) / span if span > 0 else np.zeros_like(values)
    return write_mask_png(path, scaled)


def write_image_png(path, image) -> Path:
    """C x H x W image with values in [0, 1] to an RGB (or grayscale) PNG."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputError(f"image PNG needs 1 x H x W or 3 x H x W, got {image.shape}")
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.shape[0] == 1:
        Image.fromarray(pixels[0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(np.transpose(pixels, (1, 2, 0)))).save(path)
    return path


def read_image(path) -> np.ndarray:
    """PNG (RGB, values / 255) or FT1 image as a C x H x W float32 array."""
    path = _existing(path)
    if path.suffix.lower() == ".ft1":
        array = read_ft1(path)
        if array.ndim == 2:
            array = array[None]
        if array.ndim != 3:
            raise InputError(f"{path}: image tensors must be C x H x W, got {array.shape}")
        return array
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as err:
        raise InputError(f"{path}: cannot decode image ({err})") from err
    return np.ascontiguousarray(np.transpose(pixels, (2, 0, 1)))


def _existing(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    return path
