"""
ECFNet: preprocessing, multi-stage encoders, cross-scale feature fusion,
texture-transfer / structure-aware decoder and the training loss
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..autograd import Parameter, Tensor
from ..autograd import functional as F
from ..autograd.tensor import resolve_dtype
from ..config import ModelConfig
from ..data.degradation import kspace_zero_fill
from ..errors import ShapeMismatchError
from .layers import Conv2d, Module, ResidualBlock, run_blocks
from .operators import (
    ChannelAlignParams,
    CrossAttentionParams,
    DeformableConvParams,
    SICMParams,
    TTMParams,
    channel_align,
    compute_offsets,
    deformable_conv,
    dual_cross_attention,
    sicm_fuse,
    sobel_edge_map,
    texture_transfer,
)


def _spline_upsample(lr: Tensor, scale: int) -> Tensor:
    """Cubic-spline resampling; LR sample j sits at HR coordinate j * scale"""
    B, C, h, w = lr.shape
    rows, cols = np.meshgrid(np.arange(h * scale) / scale, np.arange(w * scale) / scale, indexing="ij")
    v = np.asarray(lr.values, dtype=np.float64)
    out = np.empty((B, C, h * scale, w * scale))
    for b in range(B):
        for c in range(C):
            out[b, c] = ndimage.map_coordinates(v[b, c], [rows, cols], order=3, mode="grid-wrap")
    return Tensor(out, dtype=lr.dtype)


def preprocess(lr: Tensor, ref: Tensor, scale: int, interpolation: str = "bicubic") -> Tuple[Tensor, Tensor]:
    """Upsample the LR image onto the reference grid and take its Sobel edge map"""
    B, _, h, w = lr.shape
    expected = (scale * h, scale * w)
    if tuple(ref.shape[2:]) != expected:
        raise ShapeMismatchError("preprocess", "spatial size", expected, tuple(ref.shape[2:]))
    if scale == 1:
        lr_up = Tensor(lr.values, dtype=lr.dtype)
    elif interpolation == "zero_fill":
        lr_up = kspace_zero_fill(lr, scale)
    elif interpolation == "bicubic":
        lr_up = _spline_upsample(lr, scale)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return lr_up, sobel_edge_map(lr_up)


# ---------------------------------------------------------------- submodules

class EncoderStage(Module):
    def __init__(self, in_channels: int, width: int, stride: int, blocks: int, dtype):
        self.down = Conv2d(in_channels, width, 3, stride=stride, padding=1, dtype=dtype)
        self.blocks = [ResidualBlock(width, dtype=dtype) for _ in range(blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        return run_blocks(self.blocks, self.down(x))


class Encoder(Module):
    """Stride-1 stem followed by stride-2 down-sampling stages"""

    def __init__(self, config: ModelConfig, residual_blocks: int):
        widths = config.stage_channels
        in_channels = [1] + widths[:-1]
        self.stages = [
            EncoderStage(cin, width, 1 if k == 0 else 2, residual_blocks, config.dtype)
            for k, (cin, width) in enumerate(zip(in_channels, widths))
        ]

    def __call__(self, img: Tensor) -> List[Tensor]:
        features = []
        x = img
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


class CFFMStage(Module):
    """Aligns the next-coarser feature onto this scale, then attends to the reference"""

    def __init__(self, width: int, coarser_width: Optional[int], config: ModelConfig):
        dtype = config.dtype
        self.use_alignment = coarser_width is not None and config.ablation.use_cffm_alignment
        self.up_proj = Conv2d(coarser_width, width, 1, dtype=dtype) if coarser_width else None
        self.deform = DeformableConvParams(width, dtype=dtype) if self.use_alignment else None
        self.align = ChannelAlignParams(2 * width, dtype=dtype) if self.use_alignment else None
        self.reduce = Conv2d(2 * width, width, 1, dtype=dtype) if coarser_width else None
        self.attention = CrossAttentionParams(width, config.attention_heads,
                                              config.residual_blocks_per_stage, dtype=dtype)

    def fuse(self, f_k: Tensor, f_coarser: Optional[Tensor]) -> Tensor:
        if self.up_proj is None or f_coarser is None:
            return f_k
        f_up = self.up_proj(F.upsample2x(f_coarser, "bilinear"))
        if self.use_alignment:
            offsets = compute_offsets(f_k, f_up, self.deform)
            aligned = deformable_conv(f_up, offsets, self.deform)
            fused = channel_align(F.concat([aligned, f_k], axis=1), self.align)
        else:
            fused = F.concat([f_up, f_k], axis=1)
        return self.reduce(fused)

    def __call__(self, f_k: Tensor, f_coarser: Optional[Tensor], f_ref_k: Tensor) -> Tensor:
        return dual_cross_attention(self.fuse(f_k, f_coarser), f_ref_k, self.attention)


class DecoderStage(Module):
    def __init__(self, width: int, finer_width: Optional[int], config: ModelConfig):
        dtype = config.dtype
        ablation = config.ablation
        self.ttm = TTMParams(width, config.instance_norm_epsilon, config.ttm_alternative_binding,
                             dtype=dtype) if ablation.use_ttm else None
        self.fuse = None if ablation.use_ttm else Conv2d(2 * width, width, 1, dtype=dtype)
        self.sicm = SICMParams(width, dtype=dtype) if ablation.use_structure_branch else None
        self.up = Conv2d(width, finer_width, 3, dtype=dtype) if finer_width else None

    def __call__(self, x: Tensor, t_k: Tensor, edge_k: Optional[Tensor]) -> Tensor:
        if self.ttm is not None:
            x = texture_transfer(t_k, x, self.ttm)
        else:
            x = self.fuse(F.concat([t_k, x], axis=1))
        if self.sicm is not None:
            x = sicm_fuse(x, edge_k, self.sicm)
        if self.up is not None:
            x = self.up(F.upsample2x(x, "nearest"))
        return x


# --------------------------------------------------------------------- model

class ECFNet(Module):
    """Reference-guided super-resolution network over single-channel images"""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        widths = config.stage_channels
        structure = config.ablation.use_structure_branch
        blocks = config.residual_blocks_per_stage
        self.lr_encoder = Encoder(config, blocks)
        self.ref_encoder = Encoder(config, blocks)
        self.edge_encoder = Encoder(config, 0) if structure else None
        self.cffm = [
            CFFMStage(width, widths[k + 1] if k + 1 < len(widths) else None, config)
            for k, width in enumerate(widths)
        ]
        self.decoder = [
            DecoderStage(width, widths[k - 1] if k > 0 else None, config)
            for k, width in enumerate(widths)
        ]
        self.sr_head = Conv2d(widths[0], 1, 3, dtype=config.dtype)
        self.struct_head = Conv2d(widths[0], 1, 3, dtype=config.dtype) if structure else None
        self.seed = seed
        self.initialize(seed)

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.config.dtype)

    def parameter_groups(self) -> Dict[str, Dict[str, Parameter]]:
        groups: Dict[str, Dict[str, Parameter]] = {}
        for name, p in self.parameters_dict().items():
            parts = name.split(".")
            if parts[0] in ("cffm", "decoder"):
                key = f"{parts[0]}.{parts[1]}"
            elif parts[0] in ("sr_head", "struct_head"):
                key = "heads"
            else:
                key = parts[0]
            groups.setdefault(key, {})[name] = p
        return groups

    def encode(self, img: Tensor, encoder: Encoder) -> List[Tensor]:
        return encode(img, encoder, self.config)

    def cffm_forward(self, feats: Sequence[Tensor], ref_feats: Sequence[Tensor]) -> List[Tensor]:
        if len(feats) != len(ref_feats):
            raise ShapeMismatchError("cffm_forward", "pyramid depth", len(feats), len(ref_feats))
        textures: List[Optional[Tensor]] = [None] * len(feats)
        for k in reversed(range(len(feats))):
            if feats[k].shape != ref_feats[k].shape:
                raise ShapeMismatchError("cffm_forward", f"stage {k + 1} shape", feats[k].shape, ref_feats[k].shape)
            coarser = feats[k + 1] if k + 1 < len(feats) else None
            textures[k] = self.cffm[k](feats[k], coarser, ref_feats[k])
        return textures

    def decode(self, textures: Sequence[Tensor],
               edge_feats: Optional[Sequence[Tensor]]) -> Tuple[Tensor, Optional[Tensor]]:
        if len(textures) != len(self.decoder):
            raise ShapeMismatchError("decode", "pyramid depth", len(self.decoder), len(textures))
        x = textures[-1]
        for k in reversed(range(len(textures))):
            edge_k = edge_feats[k] if edge_feats is not None else None
            x = self.decoder[k](x, textures[k], edge_k)
        struct = self.struct_head(x) if self.struct_head is not None else None
        return self.sr_head(x), struct

    def forward(self, lr: Tensor, ref: Tensor, training: bool = False) -> Tuple[Tensor, Optional[Tensor]]:
        lr = lr if lr.dtype == self.dtype else lr.astype(self.dtype)
        ref = ref if ref.dtype == self.dtype else ref.astype(self.dtype)
        lr_up, edge = preprocess(lr, ref, self.config.scale_factor, self.config.interpolation)
        feats = self.encode(lr_up, self.lr_encoder)
        ref_feats = self.encode(ref, self.ref_encoder)
        edge_feats = self.encode(edge, self.edge_encoder) if self.edge_encoder is not None else None
        textures = self.cffm_forward(feats, ref_feats)
        residual, struct = self.decode(textures, edge_feats)
        sr = F.add(residual, lr_up)
        if not training:
            sr = Tensor(np.clip(sr.values, 0.0, 1.0), dtype=sr.dtype)
        return sr, struct

    __call__ = forward


def encode(img: Tensor, encoder: Encoder, config: ModelConfig) -> List[Tensor]:
    """Feature pyramid [F_1 .. F_stages]; spatial size must divide by 2**(stages-1)"""
    m = config.spatial_multiple
    if img.shape[2] % m or img.shape[3] % m:
        raise ShapeMismatchError("encode", "spatial size", f"multiple of {m}", tuple(img.shape[2:]))
    return encoder(img)


def forward(pair, model: ECFNet, training: bool = False) -> Tuple[Tensor, Optional[Tensor]]:
    """Run the model on one :class:`ImagePair`"""
    return model.forward(pair.lr, pair.ref, training=training)


def reconstruction_loss(sr: Tensor, hr: Tensor, struct_pred: Optional[Tensor] = None) -> Tensor:
    """Mean L1 to the HR image plus mean L1 between the structure head and Sobel(HR)"""
    if sr.shape != hr.shape:
        raise ShapeMismatchError("loss", "sr shape", hr.shape, sr.shape)
    hr = hr if hr.dtype == sr.dtype else hr.astype(sr.dtype)
    total = F.mean(F.abs(F.sub(sr, hr)))
    if struct_pred is not None:
        if struct_pred.shape != hr.shape:
            raise ShapeMismatchError("loss", "struct shape", hr.shape, struct_pred.shape)
        total = F.add(total, F.mean(F.abs(F.sub(struct_pred, sobel_edge_map(hr)))))
    return total


loss = reconstruction_loss
