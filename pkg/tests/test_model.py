import numpy as np
import pytest

from ecfnet.autograd import Tensor, gradcheck
from ecfnet.autograd import functional as F
from ecfnet.config import AblationSwitches, ModelConfig
from ecfnet.data.degradation import kspace_truncate
from ecfnet.errors import ShapeMismatchError
from ecfnet.ml import gradcheck_suites
from ecfnet.ml.model import ECFNet, Encoder, encode, preprocess, reconstruction_loss
from ecfnet.ml.operators import channel_align, dual_cross_attention, sobel_edge_map


def conv(values, layer):
    return F.conv2d(Tensor(values), layer.weight, layer.bias, stride=layer.stride,
                    padding=layer.padding, groups=layer.groups).values


def ablated(config, **switches):
    return config.model_copy(update={"ablation": AblationSwitches(**switches)})


# -------------------------------------------------------------- preprocess

def test_constant_lr_upsamples_to_constant_without_edges():
    lr_up, edge = preprocess(Tensor(np.full((1, 1, 8, 8), 0.6)), Tensor(np.zeros((1, 1, 32, 32))), 4)
    assert lr_up.shape == (1, 1, 32, 32)
    np.testing.assert_allclose(lr_up.values, 0.6, atol=1e-12)
    np.testing.assert_allclose(edge.values, 0.0, atol=1e-12)


def test_scale_one_is_identity(rng):
    lr = rng.uniform(size=(1, 1, 8, 8))
    lr_up, _ = preprocess(Tensor(lr), Tensor(lr), 1)
    np.testing.assert_array_equal(lr_up.values, lr)


@pytest.mark.parametrize("interpolation,tol", [("bicubic", 0.02), ("zero_fill", 1e-9)])
def test_bandlimited_sinusoid_is_recovered(interpolation, tol):
    y, x = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
    hr = 0.5 + 0.4 * np.cos(2 * np.pi * 2 * x / 64) * np.cos(2 * np.pi * y / 64)
    lr = kspace_truncate(Tensor(hr.reshape(1, 1, 64, 64)), 4)
    lr_up, _ = preprocess(lr, Tensor(np.zeros((1, 1, 64, 64))), 4, interpolation)
    assert np.max(np.abs(lr_up.values[0, 0] - hr)) < tol


def test_preprocess_rejects_misaligned_reference():
    with pytest.raises(ShapeMismatchError):
        preprocess(Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.zeros((1, 1, 30, 32))), 4)


# ------------------------------------------------------------------ encode

def test_encoder_pyramid_shapes():
    config = ModelConfig(base_channels=32)
    features = encode(Tensor(np.zeros((1, 1, 64, 64)), dtype="float32"), Encoder(config, 0), config)
    assert [f.shape for f in features] == [(1, 32, 64, 64), (1, 64, 32, 32), (1, 128, 16, 16), (1, 256, 8, 8)]


def test_zero_input_gives_zero_features(tiny_config):
    enc = Encoder(tiny_config, 1)
    enc.initialize(4)
    for f in encode(Tensor(np.zeros((1, 1, 16, 16))), enc, tiny_config):
        assert np.all(f.values == 0.0)


def test_encode_is_deterministic(tiny_config, rng):
    enc = Encoder(tiny_config, 1)
    enc.initialize(4)
    img = Tensor(rng.uniform(size=(2, 1, 16, 16)))
    first = encode(img, enc, tiny_config)
    second = encode(img, enc, tiny_config)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(first, second))


def test_encode_requires_divisible_size(tiny_config):
    with pytest.raises(ShapeMismatchError):
        encode(Tensor(np.zeros((1, 1, 15, 16))), Encoder(tiny_config, 0), tiny_config)


# -------------------------------------------------------------------- cffm

def test_cffm_shapes_without_alignment(tiny_config, rng):
    model = ECFNet(ablated(tiny_config, use_cffm_alignment=False), seed=2)
    feats = [Tensor(rng.normal(size=(2, 4, 16, 16))), Tensor(rng.normal(size=(2, 8, 8, 8)))]
    refs = [Tensor(rng.normal(size=(2, 4, 16, 16))), Tensor(rng.normal(size=(2, 8, 8, 8)))]
    textures = model.cffm_forward(feats, refs)
    assert [t.shape for t in textures] == [(2, 4, 16, 16), (2, 8, 8, 8)]
    assert model.cffm[0].deform is None


def test_zero_offsets_make_alignment_a_plain_conv(tiny_config, rng):
    stage = ECFNet(tiny_config, seed=2).cffm[0]
    f_k, coarser = rng.normal(size=(1, 4, 16, 16)), rng.normal(size=(1, 8, 8, 8))
    f_up = conv(F.upsample2x(Tensor(coarser), "bilinear").values, stage.up_proj)
    aligned = F.conv2d(Tensor(f_up), stage.deform.weight, padding=1)
    fused = channel_align(F.concat([aligned, Tensor(f_k)], axis=1), stage.align)
    expected = conv(fused.values, stage.reduce)
    np.testing.assert_allclose(stage.fuse(Tensor(f_k), Tensor(coarser)).values, expected, atol=1e-12)


def test_cffm_pyramid_matches_straight_line_composition(tiny_config, rng):
    model = ECFNet(tiny_config, seed=5)
    feats = [Tensor(rng.normal(size=(1, 4, 16, 16))), Tensor(rng.normal(size=(1, 8, 8, 8)))]
    refs = [Tensor(rng.normal(size=(1, 4, 16, 16))), Tensor(rng.normal(size=(1, 8, 8, 8)))]

    coarse = dual_cross_attention(feats[1], refs[1], model.cffm[1].attention)
    fine = dual_cross_attention(model.cffm[0].fuse(feats[0], feats[1]), refs[0], model.cffm[0].attention)

    textures = model.cffm_forward(feats, refs)
    np.testing.assert_allclose(textures[1].values, coarse.values, atol=1e-10)
    np.testing.assert_allclose(textures[0].values, fine.values, atol=1e-10)


# ------------------------------------------------------------------ decode

def test_decoder_without_modules_is_a_plain_chain(tiny_config, rng):
    config = ablated(tiny_config, use_cffm_alignment=False, use_ttm=False, use_structure_branch=False)
    model = ECFNet(config, seed=8)
    t0, t1 = rng.normal(size=(1, 4, 16, 16)), rng.normal(size=(1, 8, 8, 8))

    x = conv(np.concatenate([t1, t1], axis=1), model.decoder[1].fuse)
    x = conv(F.upsample2x(Tensor(x), "nearest").values, model.decoder[1].up)
    x = conv(np.concatenate([t0, x], axis=1), model.decoder[0].fuse)
    expected = conv(x, model.sr_head)

    sr, struct = model.decode([Tensor(t0), Tensor(t1)], None)
    assert struct is None
    np.testing.assert_allclose(sr.values, expected, atol=1e-12)


def test_decode_shapes(tiny_config, rng):
    model = ECFNet(tiny_config, seed=8)
    textures = [Tensor(rng.normal(size=(2, 4, 16, 16))), Tensor(rng.normal(size=(2, 8, 8, 8)))]
    edges = [Tensor(rng.normal(size=(2, 4, 16, 16))), Tensor(rng.normal(size=(2, 8, 8, 8)))]
    sr, struct = model.decode(textures, edges)
    assert sr.shape == struct.shape == (2, 1, 16, 16)


# ----------------------------------------------------------------- forward

def test_zero_weights_reduce_to_global_skip(tiny_config, rng):
    model = ECFNet(tiny_config, seed=1)
    for p in model.parameters_dict().values():
        p.assign(np.zeros(p.shape))
    lr, ref = Tensor(rng.uniform(size=(1, 1, 8, 8))), Tensor(rng.uniform(size=(1, 1, 16, 16)))
    lr_up, _ = preprocess(lr, ref, 2)
    sr, _ = model(lr, ref)
    np.testing.assert_array_equal(sr.values, np.clip(lr_up.values, 0.0, 1.0))


def test_forward_is_bit_identical_across_runs(tiny_config, rng):
    lr, ref = Tensor(rng.uniform(size=(1, 1, 8, 8))), Tensor(rng.uniform(size=(1, 1, 16, 16)))
    first, _ = ECFNet(tiny_config, seed=3)(lr, ref)
    second, _ = ECFNet(tiny_config, seed=3)(lr, ref)
    assert np.array_equal(first.values, second.values)


def test_eval_clamps_but_training_does_not(tiny_config):
    model = ECFNet(tiny_config, seed=3)
    model.sr_head.bias.assign(np.array([5.0]))
    lr, ref = Tensor(np.full((1, 1, 8, 8), 0.5)), Tensor(np.full((1, 1, 16, 16), 0.5))
    assert model(lr, ref)[0].values.max() == 1.0
    assert model(lr, ref, training=True)[0].values.max() > 1.0


def test_float32_model_keeps_precision_mode(rng):
    model = ECFNet(ModelConfig(base_channels=4, stages=2, attention_heads=2, scale_factor=2), seed=0)
    sr, struct = model(Tensor(rng.uniform(size=(1, 1, 8, 8))), Tensor(rng.uniform(size=(1, 1, 16, 16))))
    assert sr.dtype == np.float32 and struct.dtype == np.float32


def counts(modules):
    return sum(m.parameter_count() for m in modules if m is not None)


def test_ablation_switches_remove_exactly_their_submodules(tiny_config):
    full = ECFNet(tiny_config)
    no_align = ECFNet(ablated(tiny_config, use_cffm_alignment=False))
    no_ttm = ECFNet(ablated(tiny_config, use_ttm=False))
    no_structure = ECFNet(ablated(tiny_config, use_structure_branch=False))

    alignment = counts([s.deform for s in full.cffm] + [s.align for s in full.cffm])
    assert alignment > 0
    assert full.parameter_count() - no_align.parameter_count() == alignment

    ttm = counts(s.ttm for s in full.decoder)
    fuse = counts(s.fuse for s in no_ttm.decoder)
    assert fuse == sum(2 * w * w + w for w in tiny_config.stage_channels)
    assert full.parameter_count() - no_ttm.parameter_count() == ttm - fuse

    structure = counts([full.edge_encoder, full.struct_head] + [s.sicm for s in full.decoder])
    assert full.parameter_count() - no_structure.parameter_count() == structure
    assert no_structure.edge_encoder is None and no_structure.struct_head is None
    assert all(s.sicm is None for s in no_structure.decoder)


def test_cffm_reduce_is_pointwise_and_attention_reduce_is_depthwise(tiny_config):
    model = ECFNet(tiny_config)
    for stage, width in zip(model.cffm, tiny_config.stage_channels):
        if stage.reduce is not None:
            assert stage.reduce.weight.shape == (width, 2 * width, 1, 1)
        assert stage.attention.reduce_dw.groups == 2 * width
        assert stage.attention.reduce_dw.weight.shape == (2 * width, 1, 3, 3)
        assert stage.attention.reduce_pw.weight.shape == (width, 2 * width, 1, 1)
    assert model.cffm[-1].reduce is None


def test_parameter_names_are_unique_paths(tiny_config):
    names = list(ECFNet(tiny_config).parameters_dict())
    assert len(names) == len(set(names))
    assert "sr_head.weight" in names
    assert any(n.startswith("cffm.0.deform.offset_conv") for n in names)


# -------------------------------------------------------------------- loss

def test_loss_zero_at_perfect_prediction(rng):
    hr = Tensor(rng.uniform(size=(1, 1, 8, 8)))
    assert reconstruction_loss(hr, hr, sobel_edge_map(hr)).item() == 0.0


def test_loss_constant_offset(rng):
    hr = rng.uniform(size=(1, 1, 8, 8))
    value = reconstruction_loss(Tensor(hr + 0.1), Tensor(hr), sobel_edge_map(Tensor(hr))).item()
    assert value == pytest.approx(0.1, abs=1e-12)


def test_loss_matches_direct_formula(rng):
    sr, hr, st = (rng.uniform(size=(2, 1, 8, 8)) for _ in range(3))
    expected = np.abs(sr - hr).mean() + np.abs(st - sobel_edge_map(Tensor(hr)).values).mean()
    assert reconstruction_loss(Tensor(sr), Tensor(hr), Tensor(st)).item() == pytest.approx(expected, abs=1e-12)
    assert reconstruction_loss(Tensor(sr), Tensor(hr)).item() == pytest.approx(np.abs(sr - hr).mean(), abs=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        reconstruction_loss(Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.zeros((1, 1, 4, 4))))


# ------------------------------------------------------------- gradcheck

@pytest.mark.parametrize("case", gradcheck_suites.e2e_cases(0), ids=lambda c: c.name)
def test_end_to_end_gradients_per_parameter_group(case):
    report = case.run()
    assert report.passed, report.per_input


def test_toy_pair_loss_gradcheck():
    model = gradcheck_suites.toy_model(1)
    lr, ref, hr = gradcheck_suites.toy_batch(1)
    params = [model.sr_head.weight, model.lr_encoder.stages[0].down.weight]

    def f(*_):
        sr, struct = model(lr, ref, training=True)
        return reconstruction_loss(sr, hr, struct)

    assert gradcheck(f, params, tol=1e-3, max_entries=6).passed
