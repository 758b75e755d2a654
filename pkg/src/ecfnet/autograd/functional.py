"""
Differentiable operators over :class:`Tensor`.

Every op computes its forward pass with numpy and registers a vector-Jacobian
product on the active tape. Convolution is cross-correlation (no kernel flip);
bilinear resampling uses the half-pixel (align-corners-false) convention.
"""
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError
from .tensor import Tensor, record_op

IntPair = Union[int, Tuple[int, int]]


def _pair(v: IntPair) -> Tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.values + b.values
    return record_op("add", (a, b), out,
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.values - b.values
    return record_op("sub", (a, b), out,
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.values * b.values
    return record_op("mul", (a, b), out,
                     lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.values / b.values

    def vjp(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return record_op("div", (a, b), out, vjp)


def neg(x: Tensor) -> Tensor:
    return record_op("neg", (x,), -x.values, lambda g: (-g,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return record_op("abs", (x,), np.abs(x.values), lambda g: (g * np.sign(x.values),))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return record_op("relu", (x,), np.where(mask, x.values, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return record_op("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


# ----------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.values, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op("sum", (x,), np.asarray(out, dtype=x.dtype), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.values, axis=axis, keepdims=keepdims)
    count = x.size // max(np.asarray(out).size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return record_op("mean", (x,), np.asarray(out, dtype=x.dtype), vjp)


# --------------------------------------------------------------------- layout

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.values.reshape(shape)
    return record_op("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record_op("transpose", (x,), np.transpose(x.values, axes),
                     lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0]
    for t in tensors[1:]:
        for dim in range(ref.ndim):
            if dim != axis % ref.ndim and t.shape[dim] != ref.shape[dim]:
                raise ShapeMismatchError("concat", f"axis {dim}", ref.shape[dim], t.shape[dim])
    out = np.concatenate([t.values for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record_op("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


# ------------------------------------------------------------------- products

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as batch indices"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul", "rank", ">= 2", (a.ndim, b.ndim))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", "inner dimension", a.shape[-1], b.shape[-2])
    out = np.matmul(a.values, b.values)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op("matmul", (a, b), out, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return record_op("softmax", (x,), out, vjp)


# -------------------------------------------------------------- normalization

def instance_norm(x: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Per (batch, channel) standardization over the spatial axes"""
    if x.ndim != 4:
        raise ShapeMismatchError("instance_norm", "rank", 4, x.ndim)
    axes = (2, 3)
    count = x.shape[2] * x.shape[3]
    v = x.values
    mu = v.mean(axis=axes, keepdims=True)
    flat = np.ptp(v, axis=axes, keepdims=True) == 0
    centered = np.where(flat, 0, v - mu)
    var = np.mean(centered * centered, axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    out = (centered * inv_std).astype(x.dtype)

    def vjp(g):
        g_sum = g.sum(axis=axes, keepdims=True)
        gx_sum = (g * out).sum(axis=axes, keepdims=True)
        return ((inv_std / count) * (count * g - g_sum - out * gx_sum),)

    return record_op("instance_norm", (x,), out, vjp)


def pool_global(x: Tensor, mode: str = "avg") -> Tensor:
    """Global average or max pooling to [B, C, 1, 1]"""
    if x.ndim != 4:
        raise ShapeMismatchError("pool_global", "rank", 4, x.ndim)
    B, C, H, W = x.shape
    if mode == "avg":
        out = x.values.mean(axis=(2, 3), keepdims=True)
        return record_op("pool_avg", (x,), out,
                         lambda g: (np.broadcast_to(g / (H * W), x.shape).astype(x.dtype),))
    if mode == "max":
        flat = x.values.reshape(B, C, H * W)
        arg = np.argmax(flat, axis=2)
        out = np.take_along_axis(flat, arg[..., None], axis=2).reshape(B, C, 1, 1)

        def vjp(g):
            gx = np.zeros((B, C, H * W), dtype=x.dtype)
            np.put_along_axis(gx, arg[..., None], g.reshape(B, C, 1), axis=2)
            return (gx.reshape(x.shape),)

        return record_op("pool_max", (x,), out, vjp)
    raise ValueError(f"unknown pooling mode {mode!r}")


# ----------------------------------------------------------------- resampling

@lru_cache(maxsize=64)
def _bilinear_matrix(n: int, dtype_name: str) -> np.ndarray:
    """(2n, n) interpolation matrix, half-pixel centres, edge-clamped"""
    out = np.zeros((2 * n, n), dtype=dtype_name)
    for i in range(2 * n):
        src = max((i + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        lam = src - i0
        out[i, i0] += 1.0 - lam
        out[i, i1] += lam
    out.flags.writeable = False
    return out


def upsample2x(x: Tensor, mode: str = "nearest") -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatchError("upsample2x", "rank", 4, x.ndim)
    B, C, H, W = x.shape
    if mode == "nearest":
        out = np.repeat(np.repeat(x.values, 2, axis=2), 2, axis=3)
        return record_op("upsample_nearest", (x,), out,
                         lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))
    if mode == "bilinear":
        ah = _bilinear_matrix(H, x.dtype.name)
        aw = _bilinear_matrix(W, x.dtype.name)
        out = np.einsum("ih,bchw,jw->bcij", ah, x.values, aw, optimize=True)
        return record_op("upsample_bilinear", (x,), out,
                         lambda g: (np.einsum("ih,bcij,jw->bchw", ah, g, aw, optimize=True),))
    raise ValueError(f"unknown upsampling mode {mode!r}")


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: IntPair = 1, padding: IntPair = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding"""
    if x.ndim != 4:
        raise ShapeMismatchError("conv2d", "input rank", 4, x.ndim)
    if weight.ndim != 4:
        raise ShapeMismatchError("conv2d", "weight rank", 4, weight.ndim)
    B, Cin, H, W = x.shape
    Cout, Cg, kh, kw = weight.shape
    if Cin != Cg * groups:
        raise ShapeMismatchError("conv2d", "input channels", Cg * groups, Cin)
    if Cout % groups:
        raise ShapeMismatchError("conv2d", "output channels", f"multiple of {groups}", Cout)
    if bias is not None and bias.shape != (Cout,):
        raise ShapeMismatchError("conv2d", "bias length", Cout, bias.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if min(sh, sw) < 1 or min(ph, pw) < 0:
        raise ShapeMismatchError("conv2d", "stride/padding", "stride >= 1, padding >= 0", (stride, padding))
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeMismatchError("conv2d", "spatial size", f">= ({kh}, {kw}) after padding", (H, W))

    G, Og = groups, Cout // groups
    xp = np.pad(x.values, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    win_g = win.reshape(B, G, Cg, Ho, Wo, kh, kw)
    w_g = weight.values.reshape(G, Og, Cg, kh, kw)
    out = np.einsum("bgchwij,gocij->bgohw", win_g, w_g, optimize=True).reshape(B, Cout, Ho, Wo)
    if bias is not None:
        out = out + bias.values.reshape(1, Cout, 1, 1)

    def vjp(g):
        g_g = g.reshape(B, G, Og, Ho, Wo)
        gw = np.einsum("bgohw,bgchwij->gocij", g_g, win_g, optimize=True).reshape(weight.shape)
        gcols = np.einsum("bgohw,gocij->bgchwij", g_g, w_g, optimize=True).reshape(B, Cin, Ho, Wo, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += gcols[..., i, j]
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op("conv2d", inputs, out.astype(x.dtype, copy=False), lambda g: vjp(g)[:len(inputs)])


KERNEL_GRID = tuple((ky, kx) for ky in (-1, 0, 1) for kx in (-1, 0, 1))


def deform_sample(x: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear samples of ``x`` at each 3x3 tap shifted by learned offsets.

    offsets[:, 2k] and offsets[:, 2k + 1] hold (dy, dx) for tap k of
    ``KERNEL_GRID``. Returns columns of shape [B, C, 9, H, W]; samples that fall
    outside the image read zero.
    """
    B, C, H, W = x.shape
    K = len(KERNEL_GRID)
    if offsets.shape != (B, 2 * K, H, W):
        raise ShapeMismatchError("deform_sample", "offsets shape", (B, 2 * K, H, W), offsets.shape)

    base_y = np.arange(H).reshape(1, 1, H, 1) + np.array([k[0] for k in KERNEL_GRID]).reshape(1, K, 1, 1)
    base_x = np.arange(W).reshape(1, 1, 1, W) + np.array([k[1] for k in KERNEL_GRID]).reshape(1, K, 1, 1)
    py = base_y + offsets.values[:, 0::2]
    px = base_x + offsets.values[:, 1::2]
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = (py - y0).astype(x.dtype)
    lx = (px - x0).astype(x.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    corners = []
    for dy, dx, wy, wx in ((0, 0, 1 - ly, 1 - lx), (0, 1, 1 - ly, lx), (1, 0, ly, 1 - lx), (1, 1, ly, lx)):
        yc, xc = y0 + dy, x0 + dx
        valid = (yc >= 0) & (yc < H) & (xc >= 0) & (xc < W)
        idx = np.where(valid, yc * W + xc, 0)
        corners.append((idx, valid, wy * valid, wx * valid, dy, dx))

    flat = x.values.reshape(B, C, H * W)

    def gather(idx):
        return np.stack([flat[b][:, idx[b]] for b in range(B)])  # B, C, K, H, W

    samples = [gather(idx) * valid[:, None] for idx, valid, _, _, _, _ in corners]
    out = np.zeros((B, C, K, H, W), dtype=x.dtype)
    for (idx, valid, wy, wx, _, _), v in zip(corners, samples):
        out += (wy * wx)[:, None] * v

    def vjp(g):
        gx = np.zeros((B, C * H * W), dtype=x.dtype)
        channel_base = (np.arange(C) * H * W).reshape(C, 1)
        for (idx, valid, wy, wx, _, _) in corners:
            contrib = g * (wy * wx)[:, None]
            for b in range(B):
                keys = (channel_base + idx[b].reshape(1, -1)).ravel()
                gx[b] += np.bincount(keys, weights=contrib[b].reshape(-1), minlength=C * H * W)
        v00, v01, v10, v11 = samples
        d_py = (-(1 - lx)[:, None] * v00 - lx[:, None] * v01 + (1 - lx)[:, None] * v10 + lx[:, None] * v11)
        d_px = (-(1 - ly)[:, None] * v00 + (1 - ly)[:, None] * v01 - ly[:, None] * v10 + ly[:, None] * v11)
        g_off = np.empty(offsets.shape, dtype=offsets.dtype)
        g_off[:, 0::2] = (g * d_py).sum(axis=1)
        g_off[:, 1::2] = (g * d_px).sum(axis=1)
        return gx.reshape(x.shape), g_off

    return record_op("deform_sample", (x, offsets), out, vjp)
