import numpy as np
import pandas as pd
import pytest

from ecfnet.autograd import Parameter
from ecfnet.config import ModelConfig, PhantomSpec, RunConfig, TrainConfig
from ecfnet.data import make_dataset
from ecfnet.errors import CheckpointConfigMismatch, ChecksumError, DataFormatError, NumericalAbort, TapeError
from ecfnet.ml import ABLATION_VARIANTS, ECFNet, OptimizerState, adam_step, run_ablation, train
from ecfnet.ml.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, snapshot
from ecfnet.ml.trainer import variant_config, write_loss_curve

TOY = ModelConfig(base_channels=4, stages=2, residual_blocks_per_stage=1, attention_heads=2, scale_factor=2)


@pytest.fixture(scope="module")
def pairs():
    return make_dataset(3, PhantomSpec(size=16, ellipses=5, min_axis=0.1, max_axis=0.4, seed=21), 2)


def short_run(**overrides):
    return TrainConfig(**{"lr": 1e-3, "epochs": 2, "batch_size": 2, "seed": 4, **overrides})


# -------------------------------------------------------------------- adam

def test_zero_gradient_leaves_parameters_and_counts_the_step():
    p = Parameter(np.array([0.3, -1.2]), name="p")
    p.grad = np.zeros(2)
    state = adam_step({"p": p}, OptimizerState(lr=0.1))
    assert state.t == 1
    np.testing.assert_array_equal(p.values, [0.3, -1.2])


def test_first_step_moves_by_the_learning_rate():
    p = Parameter(np.array([1.0]), name="p")
    p.grad = np.array([1.0])
    adam_step({"p": p}, OptimizerState(lr=0.1))
    assert p.values[0] == pytest.approx(0.9, abs=1e-8)


def test_quadratic_trajectory_matches_scalar_adam():
    p = Parameter(np.array([1.0]), name="p")
    state = OptimizerState(lr=0.05)
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 6):
        p.grad = 2 * p.values.copy()
        adam_step({"p": p}, state)
        g = 2 * x
        m = 0.9 * m + (1 - 0.9) * g
        v = 0.999 * v + (1 - 0.999) * g * g
        x = x - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p.values[0] == pytest.approx(x, abs=1e-12)


def test_missing_gradient_is_an_error():
    p = Parameter(np.zeros(2), name="p")
    with pytest.raises(TapeError):
        adam_step({"p": p}, OptimizerState())


# ------------------------------------------------------------------- train

def test_zero_learning_rate_keeps_parameters_bit_identical(pairs):
    model = ECFNet(TOY, seed=1)
    before = {k: p.values.copy() for k, p in model.parameters_dict().items()}
    train(model, pairs, short_run(lr=0.0))
    for name, p in model.parameters_dict().items():
        assert np.array_equal(p.values, before[name]), name


def test_training_is_deterministic(pairs):
    first = train(ECFNet(TOY, seed=1), pairs, short_run())
    second = train(ECFNet(TOY, seed=1), pairs, short_run())
    assert first.step == 4
    assert first.losses == second.losses
    assert all(np.isfinite(first.losses))
    assert list(first.loss_curve.columns) == ["step", "epoch", "loss", "wall_ms"]


def test_max_steps_caps_training(pairs):
    result = train(ECFNet(TOY, seed=1), pairs, short_run(max_steps=3))
    assert result.step == 3 and len(result.losses) == 3


def test_resume_continues_the_uninterrupted_run(pairs, tmp_path):
    full = train(ECFNet(TOY, seed=1), pairs, short_run(checkpoint_every=2), checkpoint_dir=tmp_path)
    mid = load_checkpoint(tmp_path / "step_000002.ckpt", expected=TOY)
    assert mid.step == 2 and mid.rng == {"seed": 4, "epoch": 0, "batch": 2}

    resumed = train(ECFNet(TOY, seed=99), pairs, short_run(), resume=mid)
    assert resumed.step == 4
    assert resumed.losses == full.losses[2:]


def test_nan_parameter_aborts_naming_the_tensor(pairs):
    model = ECFNet(TOY, seed=1)
    model.parameters_dict()["sr_head.bias"].assign(np.array([np.nan]))
    with pytest.raises(NumericalAbort) as info:
        train(model, pairs, short_run())
    assert info.value.tensor_name == "sr_head.bias"
    assert info.value.step == 1 and info.value.exit_code == 4


def test_empty_dataset_is_rejected():
    with pytest.raises(ValueError):
        train(ECFNet(TOY), [], short_run())


def test_loss_curve_appends_after_resume_point(tmp_path):
    path = tmp_path / "loss_curve.csv"
    rows = [{"step": s, "epoch": 0, "loss": 1.0 / s, "wall_ms": 1.0} for s in (1, 2, 3)]
    write_loss_curve(pd.DataFrame(rows), path)
    later = pd.DataFrame([{"step": 3, "epoch": 1, "loss": 0.5, "wall_ms": 2.0}])
    write_loss_curve(later, path, after_step=2)
    frame = pd.read_csv(path)
    assert frame["step"].tolist() == [1, 2, 3]
    assert frame["loss"].iloc[-1] == 0.5


@pytest.mark.slow
def test_single_pair_overfit(pairs):
    model = ECFNet(TOY.model_copy(update={"base_channels": 8}), seed=0)
    result = train(model, pairs[:1], TrainConfig(lr=1e-3, epochs=200, batch_size=1, seed=0))
    assert result.losses[-1] < 0.25 * result.losses[0]


# -------------------------------------------------------------- checkpoints

@pytest.fixture
def trained_checkpoint(pairs, tmp_path):
    train(ECFNet(TOY, seed=1), pairs, short_run(max_steps=2), checkpoint_dir=tmp_path, config_hash="cafe")
    return tmp_path / "final.ckpt"


def test_save_load_save_is_byte_identical(trained_checkpoint, tmp_path):
    ckpt = load_checkpoint(trained_checkpoint)
    again = save_checkpoint(ckpt, tmp_path / "again.ckpt")
    assert again.read_bytes() == trained_checkpoint.read_bytes()
    assert ckpt.config_hash == "cafe" and ckpt.optimizer.t == 2
    assert set(ckpt.params) == set(ckpt.optimizer.m) == set(ckpt.optimizer.v)


def test_checkpoint_preserves_every_parameter_bit(pairs):
    model = ECFNet(TOY, seed=6)
    state = OptimizerState(t=3)
    state.ensure_slots(model.parameters_dict())
    ckpt = snapshot(model.parameters_dict(), state, {"model": TOY.model_dump(mode="json")},
                    epoch=1, step=3, rng={"seed": 0, "epoch": 1, "batch": 0}, config_hash="")
    back = decode_checkpoint(encode_checkpoint(ckpt))
    for name, p in model.parameters_dict().items():
        assert back.params[name].tobytes() == p.values.tobytes()
    assert back.optimizer.t == 3 and back.epoch == 1


def test_mismatched_stage_count_is_a_config_error(trained_checkpoint):
    with pytest.raises(CheckpointConfigMismatch) as info:
        load_checkpoint(trained_checkpoint, expected=TOY.model_copy(update={"stages": 3}))
    assert info.value.field == "model.stages"
    assert info.value.exit_code == 2


def test_truncated_checkpoint(trained_checkpoint):
    data = trained_checkpoint.read_bytes()
    for cut in (4, 40, len(data) - 7):
        with pytest.raises(DataFormatError):
            decode_checkpoint(data[:cut])


def test_corrupted_payload_fails_crc(trained_checkpoint):
    data = bytearray(trained_checkpoint.read_bytes())
    data[-3] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(data))


def test_unknown_format_version(trained_checkpoint):
    data = trained_checkpoint.read_bytes().replace(b'"version":1', b'"version":7', 1)
    with pytest.raises(CheckpointConfigMismatch):
        decode_checkpoint(data)


# ----------------------------------------------------------------- ablation

def test_variants_share_initialization_for_common_modules():
    full = ECFNet(TOY, seed=3).parameters_dict()
    for _, overrides in ABLATION_VARIANTS:
        variant = ECFNet(variant_config(TOY, overrides), seed=3).parameters_dict()
        for name in set(full) & set(variant):
            assert np.array_equal(full[name].values, variant[name].values), name


def test_ablation_table_layout_and_determinism(pairs):
    config = RunConfig(model=TOY, train=short_run(max_steps=1))
    table = run_ablation(pairs[:2], pairs[2:], config)
    assert table["variant"].tolist() == [
        "w/o multi-scale feature alignment", "w/o texture transfer", "w/o structure branch", "full version",
    ]
    assert table[["CFFM", "TTM", "SICM"]].values.tolist() == [
        ["×", "✓", "✓"], ["✓", "×", "✓"], ["✓", "✓", "×"], ["✓", "✓", "✓"],
    ]
    assert table["parameters"].iloc[3] == table["parameters"].max()
    pd.testing.assert_frame_equal(table, run_ablation(pairs[:2], pairs[2:], config))
