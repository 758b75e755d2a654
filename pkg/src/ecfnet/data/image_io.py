"""
Image files: 16-bit grayscale PNG and the lossless "ECF1" raw float format.

Raw layout: b"ECF1", u32 height, u32 width (little-endian), then height*width
little-endian float32 values in row-major order.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..autograd import Tensor
from ..errors import DataFormatError
from ..utils.retry import durable_write

RAW_MAGIC = b"ECF1"
RAW_HEADER = struct.Struct("<4sII")
MAX_PIXELS = 1 << 28
PNG_LEVELS = 65535

PathLike = Union[str, Path]


def _plane(img: Union[Tensor, np.ndarray]) -> np.ndarray:
    values = img.values if isinstance(img, Tensor) else np.asarray(img)
    if values.ndim == 4 and values.shape[:2] == (1, 1):
        values = values[0, 0]
    if values.ndim != 2:
        raise DataFormatError(f"expected a single-channel image, got shape {values.shape}", shape=list(values.shape))
    return values


def _as_image_tensor(plane: np.ndarray) -> Tensor:
    return Tensor(plane.reshape(1, 1, *plane.shape), dtype=np.float32)


@durable_write
def write_raw(img: Union[Tensor, np.ndarray], path: PathLike) -> Path:
    plane = _plane(img)
    path = Path(path)
    H, W = plane.shape
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(RAW_MAGIC, H, W))
        fh.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())
    return path


def read_raw(path: PathLike) -> Tensor:
    data = Path(path).read_bytes()
    if len(data) < RAW_HEADER.size:
        raise DataFormatError(f"malformed header in {path}: file too short", path=str(path))
    magic, H, W = RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise DataFormatError(f"malformed header in {path}: bad magic {magic!r}", path=str(path))
    if H * W > MAX_PIXELS:
        raise DataFormatError(f"size overflow in {path}: {H}x{W}", path=str(path), height=H, width=W)
    expected = RAW_HEADER.size + 4 * H * W
    if len(data) != expected:
        raise DataFormatError(f"{path} holds {len(data)} bytes, header implies {expected}",
                              path=str(path), expected=expected, actual=len(data))
    plane = np.frombuffer(data, dtype="<f4", offset=RAW_HEADER.size).reshape(H, W)
    return _as_image_tensor(plane.astype(np.float32))


@durable_write
def write_png(img: Union[Tensor, np.ndarray], path: PathLike) -> Path:
    """Store v in [0, 1] as round(v * 65535); values outside the range are clipped"""
    plane = np.clip(np.asarray(_plane(img), dtype=np.float64), 0.0, 1.0)
    levels = np.round(plane * PNG_LEVELS).astype(np.uint16)
    path = Path(path)
    Image.fromarray(levels).save(path, format="PNG")
    return path


def read_png(path: PathLike) -> Tensor:
    try:
        with Image.open(path) as im:
            levels = np.array(im)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot decode PNG {path}: {exc}", path=str(path)) from exc
    if levels.ndim != 2:
        raise DataFormatError(f"{path} is not single-channel grayscale", path=str(path))
    scale = PNG_LEVELS if levels.dtype != np.uint8 else 255
    return _as_image_tensor(levels.astype(np.float64) / scale)


def read_image(path: PathLike) -> Tensor:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_png(path)
    if suffix == ".ecf":
        return read_raw(path)
    raise DataFormatError(f"unsupported image extension {suffix!r}", path=str(path))


def write_image(img: Union[Tensor, np.ndarray], path: PathLike) -> Path:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return write_png(img, path)
    if suffix == ".ecf":
        return write_raw(img, path)
    raise DataFormatError(f"unsupported image extension {suffix!r}", path=str(path))
