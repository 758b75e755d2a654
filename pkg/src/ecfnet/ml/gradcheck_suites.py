"""
Finite-difference suites over every differentiable operator and a toy ECFNet.

All tensors are float64. Operator outputs are contracted with a fixed random
cotangent so each case checks a full vector-Jacobian product. Deformable
offsets are kept away from integer sampling positions, where bilinear
interpolation has a kink.
"""
from typing import List

import numpy as np

from ..autograd import GradcheckCase, Parameter, Tensor
from ..autograd import functional as F
from ..config import ModelConfig
from ..utils.seeding import substream
from . import operators as ops
from .layers import Module
from .model import ECFNet, reconstruction_loss

OP_TOL = 1e-4
E2E_TOL = 1e-3

TOY_MODEL = ModelConfig(base_channels=4, stages=2, residual_blocks_per_stage=1, attention_heads=2,
                        scale_factor=2, dtype="float64")


def _x(rng: np.random.Generator, *shape, scale: float = 1.0, name: str = "x") -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True, name=name)


def _randomize(module: Module, rng: np.random.Generator, scale: float = 0.3) -> Module:
    for _, p in module.named_parameters():
        p.assign(rng.normal(scale=scale, size=p.shape))
    return module


def _fractional_offsets(rng: np.random.Generator, shape) -> Tensor:
    whole = rng.integers(-1, 2, size=shape)
    return Tensor(whole + rng.uniform(0.2, 0.8, size=shape), requires_grad=True, name="offsets")


def _case(name: str, build, tol: float = OP_TOL, max_entries=None) -> GradcheckCase:
    return GradcheckCase(name=name, build=build, tol=tol, max_entries=max_entries)


def operator_cases(seed: int = 0) -> List[GradcheckCase]:
    def rng(tag: str) -> np.random.Generator:
        return substream(seed, f"gradcheck:{tag}")

    def conv2d():
        r = rng("conv2d")
        x, w, b = _x(r, 2, 4, 6, 5), _x(r, 6, 2, 3, 3, name="weight"), _x(r, 6, name="bias")
        projection = r.normal(size=(2, 6, 3, 3))
        return (lambda x, w, b: F.sum(F.mul(F.conv2d(x, w, b, stride=2, padding=1, groups=2), projection)),
                [x, w, b])

    def matmul():
        r = rng("matmul")
        a, b = _x(r, 2, 3, 4, name="a"), _x(r, 4, 5, name="b")
        projection = r.normal(size=(2, 3, 5))
        return lambda a, b: F.sum(F.mul(F.matmul(a, b), projection)), [a, b]

    def softmax():
        r = rng("softmax")
        x = _x(r, 3, 7)
        projection = r.normal(size=(3, 7))
        return lambda x: F.sum(F.mul(F.softmax(x, axis=-1), projection)), [x]

    def instance_norm():
        r = rng("instance_norm")
        x = _x(r, 2, 3, 4, 4)
        projection = r.normal(size=x.shape)
        return lambda x: F.sum(F.mul(F.instance_norm(x, 1e-5), projection)), [x]

    def upsample(mode):
        def build():
            r = rng(f"upsample_{mode}")
            x = _x(r, 1, 2, 3, 4)
            projection = r.normal(size=(1, 2, 6, 8))
            return lambda x: F.sum(F.mul(F.upsample2x(x, mode), projection)), [x]
        return build

    def pool(mode):
        def build():
            r = rng(f"pool_{mode}")
            x = _x(r, 2, 3, 4, 4)
            projection = r.normal(size=(2, 3, 1, 1))
            return lambda x: F.sum(F.mul(F.pool_global(x, mode), projection)), [x]
        return build

    def deformable_conv():
        r = rng("deformable_conv")
        p = _randomize(ops.DeformableConvParams(3, dtype="float64"), r)
        x = _x(r, 1, 3, 5, 5)
        offsets = _fractional_offsets(r, (1, 18, 5, 5))
        projection = r.normal(size=(1, 3, 5, 5))
        return (lambda x, offsets, w: F.sum(F.mul(ops.deformable_conv(x, offsets, p), projection)),
                [x, offsets, p.weight])

    def compute_offsets():
        r = rng("compute_offsets")
        p = _randomize(ops.DeformableConvParams(2, dtype="float64"), r)
        f_k, f_up = _x(r, 1, 2, 4, 4, name="f_k"), _x(r, 1, 2, 4, 4, name="f_up")
        projection = r.normal(size=(1, 18, 4, 4))
        return (lambda a, b, w: F.sum(F.mul(ops.compute_offsets(a, b, p), projection)),
                [f_k, f_up, p.offset_conv.weight])

    def channel_align():
        r = rng("channel_align")
        p = _randomize(ops.ChannelAlignParams(4, dtype="float64"), r)
        x = _x(r, 2, 4, 3, 3)
        projection = r.normal(size=x.shape)
        return (lambda x, w1, w2: F.sum(F.mul(ops.channel_align(x, p), projection)),
                [x, p.fc1.weight, p.fc2.weight])

    def dual_cross_attention():
        r = rng("dual_cross_attention")
        p = _randomize(ops.CrossAttentionParams(4, 2, residual_blocks=1, dtype="float64"), r)
        f_lr, f_ref = _x(r, 1, 4, 3, 3, name="f_lr"), _x(r, 1, 4, 3, 3, name="f_ref")
        projection = r.normal(size=(1, 4, 3, 3))
        return (lambda a, b, wq, wv: F.sum(F.mul(ops.dual_cross_attention(a, b, p), projection)),
                [f_lr, f_ref, p.q_s.weight, p.v_c.weight])

    def texture_transfer():
        r = rng("texture_transfer")
        p = _randomize(ops.TTMParams(3, dtype="float64"), r)
        t, x = _x(r, 1, 3, 4, 4, name="t_k"), _x(r, 1, 3, 4, 4, name="x_k")
        projection = r.normal(size=(1, 3, 4, 4))
        return (lambda t, x, wb: F.sum(F.mul(ops.texture_transfer(t, x, p), projection)),
                [t, x, p.beta_conv.conv1.weight])

    def sicm_fuse():
        r = rng("sicm_fuse")
        p = _randomize(ops.SICMParams(3, dtype="float64"), r)
        x, e = _x(r, 1, 3, 4, 4, name="x_k"), _x(r, 1, 3, 4, 4, name="edge_feat")
        projection = r.normal(size=(1, 3, 4, 4))
        return (lambda x, e, w: F.sum(F.mul(ops.sicm_fuse(x, e, p), projection)),
                [x, e, p.conv_3x1.weight])

    def loss():
        r = rng("loss")
        sr = _x(r, 2, 1, 6, 6, name="sr")
        struct = _x(r, 2, 1, 6, 6, name="struct")
        hr = Tensor(r.uniform(size=(2, 1, 6, 6)))
        return lambda sr, st: reconstruction_loss(sr, hr, st), [sr, struct]

    return [
        _case("conv2d", conv2d),
        _case("matmul", matmul),
        _case("softmax", softmax),
        _case("instance_norm", instance_norm),
        _case("upsample_nearest", upsample("nearest")),
        _case("upsample_bilinear", upsample("bilinear")),
        _case("pool_avg", pool("avg")),
        _case("pool_max", pool("max")),
        _case("compute_offsets", compute_offsets),
        _case("deformable_conv", deformable_conv),
        _case("channel_align", channel_align),
        _case("dual_cross_attention", dual_cross_attention),
        _case("texture_transfer", texture_transfer),
        _case("sicm_fuse", sicm_fuse),
        _case("loss", loss),
    ]


def toy_model(seed: int = 0, config: ModelConfig = TOY_MODEL) -> ECFNet:
    """Float64 toy ECFNet with non-zero biases and fractional constant offsets"""
    model = ECFNet(config, seed=seed)
    r = substream(seed, "gradcheck:toy")
    for name, p in model.parameters_dict().items():
        if name.endswith("offset_conv.bias"):
            p.assign(r.uniform(0.2, 0.8, size=p.shape) * r.choice([-1.0, 1.0], size=p.shape))
        elif name.endswith("bias"):
            p.assign(r.normal(scale=0.05, size=p.shape))
    return model


def toy_batch(seed: int = 0, size: int = 16, scale: int = 2):
    r = substream(seed, "gradcheck:toy_batch")
    lr = Tensor(r.uniform(0.1, 0.9, size=(1, 1, size // scale, size // scale)))
    ref = Tensor(r.uniform(0.1, 0.9, size=(1, 1, size, size)))
    hr = Tensor(r.uniform(0.1, 0.9, size=(1, 1, size, size)))
    return lr, ref, hr


def e2e_cases(seed: int = 0, samples_per_group: int = 10, config: ModelConfig = TOY_MODEL) -> List[GradcheckCase]:
    """One case per parameter group, ``samples_per_group`` coordinates each"""
    groups = toy_model(seed, config).parameter_groups()
    cases = []
    for group in groups:
        def build(group=group):
            model = toy_model(seed, config)
            lr, ref, hr = toy_batch(seed, scale=config.scale_factor)
            params: List[Parameter] = list(model.parameter_groups()[group].values())
            r = substream(seed, f"gradcheck:pick:{group}")
            picked = [params[i] for i in sorted(r.choice(len(params), size=min(5, len(params)), replace=False))]

            def f(*_):
                sr, struct = model.forward(lr, ref, training=True)
                return reconstruction_loss(sr, hr, struct)

            return f, picked

        per_input = max(1, samples_per_group // min(5, len(groups[group])))
        cases.append(_case(f"e2e:{group}", build, tol=E2E_TOL, max_entries=per_input))
    return cases
