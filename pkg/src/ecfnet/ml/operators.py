"""
ECFNet building blocks: Sobel edges, deformable alignment, channel gating,
dual cross-attention, texture transfer and structure-information fusion.

Every operator is a plain function over tensors plus the parameter container
it reads; none of them mutate parameters.
"""
from typing import List, Optional

import numpy as np
from scipy import ndimage

from ..autograd import Tensor
from ..autograd import functional as F
from ..autograd.functional import KERNEL_GRID
from ..errors import ShapeMismatchError
from .layers import ConvBlock, Conv2d, Linear, Module, ResidualBlock, _param, run_blocks

SOBEL_MAX_RESPONSE = 4.0 * np.sqrt(2.0)


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, "input shape", a.shape, b.shape)


# ---------------------------------------------------------------- parameters

class DeformableConvParams(Module):
    """Offset predictor plus the 3x3 kernel it samples with"""

    def __init__(self, channels: int, out_channels: Optional[int] = None, dtype=None):
        out_channels = out_channels or channels
        self.kernel_grid = KERNEL_GRID
        # zero init: alignment starts out as a plain 3x3 convolution
        self.offset_conv = Conv2d(2 * channels, 2 * len(KERNEL_GRID), 3, init="zeros", dtype=dtype)
        self.weight = _param((out_channels, channels, 3, 3), "kaiming", channels * 9, self.offset_conv.weight.dtype)


class ChannelAlignParams(Module):
    """Shared two-layer MLP behind the channel gate"""

    def __init__(self, channels: int, dtype=None):
        self.hidden = max(1, channels // 16)
        self.fc1 = Linear(channels, self.hidden, dtype=dtype)
        self.fc2 = Linear(self.hidden, channels, dtype=dtype)

    def mlp(self, pooled: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(pooled)))


class CrossAttentionParams(Module):
    """Spatial and channel Q/K/V projections plus the output reduction"""

    def __init__(self, channels: int, head_count: int, residual_blocks: int = 2, dtype=None):
        if channels % head_count:
            raise ShapeMismatchError("dual_cross_attention", "head_count", f"divisor of {channels}", head_count)
        self.head_count = head_count
        self.head_dim = channels // head_count
        self.q_s = Linear(channels, channels, dtype=dtype)
        self.k_s = Linear(channels, channels, dtype=dtype)
        self.v_s = Linear(channels, channels, dtype=dtype)
        self.q_c = Linear(channels, channels, dtype=dtype)
        self.k_c = Linear(channels, channels, dtype=dtype)
        self.v_c = Linear(channels, channels, dtype=dtype)
        self.reduce_dw = Conv2d(2 * channels, 2 * channels, 3, groups=2 * channels, dtype=dtype)
        self.reduce_pw = Conv2d(2 * channels, channels, 1, dtype=dtype)
        self.blocks = [ResidualBlock(channels, dtype=dtype) for _ in range(residual_blocks)]


class TTMParams(Module):
    """Beta/gamma generators and the fusion layers of texture transfer"""

    def __init__(self, channels: int, epsilon: float = 1e-5, alternative_binding: bool = False, dtype=None):
        self.epsilon = epsilon
        self.alternative_binding = alternative_binding
        self.beta_conv = ConvBlock(channels, channels, dtype=dtype)
        self.gamma_conv = ConvBlock(channels, channels, dtype=dtype)
        self.fuse = Conv2d(2 * channels, channels, 1, dtype=dtype)
        self.fuse_block = ResidualBlock(channels, dtype=dtype)


class SICMParams(Module):
    """Asymmetric edge convs, channel gate and output convs of structure fusion"""

    def __init__(self, channels: int, dtype=None):
        self.conv_3x1 = Conv2d(channels, channels, (3, 1), padding=(1, 0), dtype=dtype)
        self.conv_1x3 = Conv2d(channels, channels, (1, 3), padding=(0, 1), dtype=dtype)
        self.conv_1x1 = Conv2d(2 * channels, channels, 1, dtype=dtype)
        self.align = ChannelAlignParams(2 * channels, dtype=dtype)
        self.conv_a = Conv2d(2 * channels, channels, 3, dtype=dtype)
        self.conv_b = Conv2d(channels, channels, 3, dtype=dtype)


# ---------------------------------------------------------------- operators

def sobel_edge_map(img: Tensor) -> Tensor:
    """Sobel gradient magnitude, replicate borders, scaled into [0, 1].

    Not differentiable; the result is a constant input for the network.
    """
    if img.ndim != 4:
        raise ShapeMismatchError("sobel_edge_map", "rank", 4, img.ndim)
    v = np.asarray(img.values, dtype=np.float64)
    gx = ndimage.correlate1d(ndimage.correlate1d(v, [-1.0, 0.0, 1.0], axis=3, mode="nearest"),
                             [1.0, 2.0, 1.0], axis=2, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(v, [-1.0, 0.0, 1.0], axis=2, mode="nearest"),
                             [1.0, 2.0, 1.0], axis=3, mode="nearest")
    magnitude = np.clip(np.hypot(gx, gy) / SOBEL_MAX_RESPONSE, 0.0, 1.0)
    return Tensor(magnitude, dtype=img.dtype)


def compute_offsets(f_k: Tensor, f_up: Tensor, p: DeformableConvParams) -> Tensor:
    """(dy, dx) per kernel tap predicted from the fine and upsampled features"""
    _check_same("compute_offsets", f_k, f_up)
    return p.offset_conv(F.concat([f_k, f_up], axis=1))


def deformable_conv(f_up: Tensor, offsets: Tensor, p: DeformableConvParams) -> Tensor:
    """3x3 convolution whose taps are bilinearly sampled at ``offsets``"""
    B, C, H, W = f_up.shape
    if p.weight.shape[1] != C:
        raise ShapeMismatchError("deformable_conv", "input channels", p.weight.shape[1], C)
    cols = F.deform_sample(f_up, offsets)                       # B, C, 9, H, W
    cols = F.reshape(cols, (B, C * len(p.kernel_grid), H * W))
    w = F.reshape(p.weight, (p.weight.shape[0], C * len(p.kernel_grid)))
    return F.reshape(F.matmul(w, cols), (B, p.weight.shape[0], H, W))


def channel_gate(f: Tensor, p: ChannelAlignParams) -> Tensor:
    """phi = sigmoid(MLP(avg) + MLP(max)), shaped [B, C, 1, 1]"""
    B, C = f.shape[:2]
    avg = F.reshape(F.pool_global(f, "avg"), (B, C))
    mx = F.reshape(F.pool_global(f, "max"), (B, C))
    phi = F.sigmoid(F.add(p.mlp(avg), p.mlp(mx)))
    return F.reshape(phi, (B, C, 1, 1))


def channel_align(f_concat: Tensor, p: ChannelAlignParams) -> Tensor:
    """Residual channel reweighting ``phi * f + f``"""
    phi = channel_gate(f_concat, p)
    return F.add(F.mul(phi, f_concat), f_concat)


def _tokens(f: Tensor) -> Tensor:
    B, C, H, W = f.shape
    return F.transpose(F.reshape(f, (B, C, H * W)), (0, 2, 1))   # B, HW, C


def spatial_attention_map(f_lr: Tensor, f_ref: Tensor, p: CrossAttentionParams) -> Tensor:
    """Per-head attention weights over pixel tokens, [B, heads, HW, HW]"""
    B, C, H, W = f_lr.shape
    h, d = p.head_count, p.head_dim

    def heads(x: Tensor) -> Tensor:
        return F.transpose(F.reshape(x, (B, H * W, h, d)), (0, 2, 1, 3))

    q = heads(p.q_s(_tokens(f_lr)))
    k = heads(p.k_s(_tokens(f_ref)))
    scores = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    return F.softmax(scores, axis=-1)


def spatial_attention(f_lr: Tensor, f_ref: Tensor, p: CrossAttentionParams) -> Tensor:
    """Attention among pixel tokens; queries from LR, keys and values from the reference"""
    B, C, H, W = f_lr.shape
    h, d = p.head_count, p.head_dim
    attn = spatial_attention_map(f_lr, f_ref, p)
    v = F.transpose(F.reshape(p.v_s(_tokens(f_ref)), (B, H * W, h, d)), (0, 2, 1, 3))
    out = F.reshape(F.transpose(F.matmul(attn, v), (0, 2, 1, 3)), (B, H * W, C))
    return F.reshape(F.transpose(out, (0, 2, 1)), (B, C, H, W))


def channel_attention(f_lr: Tensor, f_ref: Tensor, p: CrossAttentionParams) -> Tensor:
    """Attention among channel tokens (length HW) within each head"""
    B, C, H, W = f_lr.shape
    h, d = p.head_count, p.head_dim

    def heads(x: Tensor) -> Tensor:
        return F.reshape(F.transpose(x, (0, 2, 1)), (B, h, d, H * W))

    q = heads(p.q_c(_tokens(f_lr)))
    k = heads(p.k_c(_tokens(f_ref)))
    v = heads(p.v_c(_tokens(f_ref)))
    scores = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    out = F.matmul(F.softmax(scores, axis=-1), v)
    return F.reshape(out, (B, C, H, W))


def dual_cross_attention(f_lr: Tensor, f_ref: Tensor, p: CrossAttentionParams) -> Tensor:
    """Spatial and channel cross-attention, reduced to C channels, then residual blocks"""
    _check_same("dual_cross_attention", f_lr, f_ref)
    if f_lr.shape[1] != p.head_count * p.head_dim:
        raise ShapeMismatchError("dual_cross_attention", "channels", p.head_count * p.head_dim, f_lr.shape[1])
    t_s = spatial_attention(f_lr, f_ref, p)
    t_c = channel_attention(f_lr, f_ref, p)
    fused = p.reduce_pw(p.reduce_dw(F.concat([t_s, t_c], axis=1)))
    return run_blocks(p.blocks, fused)


def transfer_affine(t_k: Tensor, x_k: Tensor, p: TTMParams) -> Tensor:
    """Normalized texture restyled by feature-conditioned beta and gamma"""
    _check_same("texture_transfer", t_k, x_k)
    t_norm = F.instance_norm(t_k, p.epsilon)
    if p.alternative_binding:
        return F.add(F.mul(x_k, p.beta_conv(t_norm)), p.gamma_conv(t_norm))
    return F.add(F.mul(t_norm, p.beta_conv(x_k)), p.gamma_conv(x_k))


def texture_transfer(t_k: Tensor, x_k: Tensor, p: TTMParams) -> Tensor:
    """Restyled texture fused with the decoder feature"""
    transferred = transfer_affine(t_k, x_k, p)
    return p.fuse_block(p.fuse(F.concat([transferred, x_k], axis=1)))


def sicm_branch(x_k: Tensor, edge_feat: Tensor, p: SICMParams) -> Tensor:
    """Structure-guided correction added to the feature by ``sicm_fuse``"""
    _check_same("sicm_fuse", x_k, edge_feat)
    s = F.add(x_k, edge_feat)
    x_edge = p.conv_1x1(F.concat([p.conv_3x1(s), p.conv_1x3(s)], axis=1))
    x_aligned = channel_align(F.concat([x_edge, x_k], axis=1), p.align)
    return p.conv_b(F.relu(p.conv_a(x_aligned)))


def sicm_fuse(x_k: Tensor, edge_feat: Tensor, p: SICMParams) -> Tensor:
    """Residual structure fusion of an edge feature into the decoder feature"""
    return F.add(sicm_branch(x_k, edge_feat, p), x_k)


__all__: List[str] = [
    "DeformableConvParams", "ChannelAlignParams", "CrossAttentionParams", "TTMParams", "SICMParams",
    "sobel_edge_map", "compute_offsets", "deformable_conv", "channel_gate", "channel_align",
    "spatial_attention_map", "spatial_attention", "channel_attention", "dual_cross_attention",
    "transfer_affine", "texture_transfer", "sicm_branch", "sicm_fuse",
]
