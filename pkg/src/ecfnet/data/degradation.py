"""
k-space truncation and its zero-filling inverse.

Both work on the unshifted spectrum from ``scipy.fft``. Keeping an even size
``n`` out of ``N`` retains frequencies ``0 .. n/2 - 1`` and ``-(n/2 - 1) .. -1``;
the Nyquist bin ``n/2`` is the average of the two source bins ``+n/2`` and
``-n/2``. Going back up, that bin is split half and half between them. Each
axis is handled separately, so real inputs give real outputs.
"""
import numpy as np
from scipy import fft

from ..autograd import Tensor
from ..errors import EcfError, ShapeMismatchError

IMAGINARY_TOLERANCE = 1e-9


def _crop_axis(spec: np.ndarray, keep: int, axis: int) -> np.ndarray:
    n = spec.shape[axis]
    half = keep // 2
    if keep % 2:
        return np.concatenate([np.take(spec, range(0, half + 1), axis=axis),
                               np.take(spec, range(n - half, n), axis=axis)], axis=axis)
    nyquist = 0.5 * (np.take(spec, [half], axis=axis) + np.take(spec, [n - half], axis=axis))
    return np.concatenate([np.take(spec, range(0, half), axis=axis),
                           nyquist,
                           np.take(spec, range(n - half + 1, n), axis=axis)], axis=axis)


def _pad_axis(spec: np.ndarray, size: int, axis: int) -> np.ndarray:
    keep = spec.shape[axis]
    half = keep // 2
    shape = list(spec.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=spec.dtype)

    def put(index, values):
        sl = [slice(None)] * spec.ndim
        sl[axis] = index
        out[tuple(sl)] += values

    if keep % 2:
        put(slice(0, half + 1), np.take(spec, range(0, half + 1), axis=axis))
        put(slice(size - half, size), np.take(spec, range(keep - half, keep), axis=axis))
        return out
    put(slice(0, half), np.take(spec, range(0, half), axis=axis))
    nyquist = 0.5 * np.take(spec, [half], axis=axis)
    put(slice(half, half + 1), nyquist)
    put(slice(size - half, size - half + 1), nyquist)
    put(slice(size - half + 1, size), np.take(spec, range(half + 1, keep), axis=axis))
    return out


def _check_scale(op: str, shape, s: int) -> None:
    if s < 1:
        raise ShapeMismatchError(op, "scale", ">= 1", s)
    H, W = shape[-2:]
    if H % s or W % s:
        raise ShapeMismatchError(op, "spatial size", f"divisible by {s}", (H, W))


def _real_part(values: np.ndarray, op: str) -> np.ndarray:
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue >= IMAGINARY_TOLERANCE:
        raise EcfError(f"{op}: imaginary residue {residue:.3e} exceeds tolerance", residue=residue)
    return values.real


def kspace_truncate(hr: Tensor, s: int) -> Tensor:
    """Keep the central (H/s, W/s) frequency block; constants are preserved"""
    _check_scale("kspace_truncate", hr.shape, s)
    H, W = hr.shape[-2:]
    h, w = H // s, W // s
    spec = fft.fft2(np.asarray(hr.values, dtype=np.float64), axes=(-2, -1))
    small = _crop_axis(_crop_axis(spec, h, -2), w, -1)
    out = fft.ifft2(small, axes=(-2, -1)) / (s * s)
    return Tensor(_real_part(out, "kspace_truncate"), dtype=hr.dtype)


def kspace_zero_fill(lr: Tensor, s: int) -> Tensor:
    """Zero-pad the spectrum back to (s*h, s*w); in-band signals come back exactly"""
    if s < 1:
        raise ShapeMismatchError("kspace_zero_fill", "scale", ">= 1", s)
    h, w = lr.shape[-2:]
    spec = fft.fft2(np.asarray(lr.values, dtype=np.float64), axes=(-2, -1))
    big = _pad_axis(_pad_axis(spec, h * s, -2), w * s, -1)
    out = fft.ifft2(big, axes=(-2, -1)) * (s * s)
    return Tensor(_real_part(out, "kspace_zero_fill"), dtype=lr.dtype)
