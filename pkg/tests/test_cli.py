import json

import numpy as np
import pandas as pd
import pytest

from ecfnet.autograd import GradcheckCase, Tensor
from ecfnet.autograd import functional as F
from ecfnet.autograd.tensor import record_op
from ecfnet.cli import main
from ecfnet.config import load_run_config
from ecfnet.ml import ECFNet, OptimizerState, gradcheck_suites
from ecfnet.ml.checkpoint import save_checkpoint, snapshot

TOY_KEYS = """\
model.base_channels=4
model.stages=2
model.residual_blocks_per_stage=1
model.attention_heads=2
model.scale_factor=2
phantom.size=16
phantom.ellipses=5
phantom.min_axis=0.1
phantom.max_axis=0.4
data.n=3
train.epochs=1
train.batch_size=2
train.lr=0.001
"""


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.env"
    path.write_text(TOY_KEYS)
    return path


@pytest.fixture
def synthesized(tmp_path, toy_config):
    out = tmp_path / "data"
    assert main(["synth", "--config", str(toy_config), "--seed", "5", "--out", str(out)]) == 0
    return out


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -------------------------------------------------------------------- synth

def test_synth_writes_pairs_manifest_and_baseline(tmp_path, capsys):
    out = tmp_path / "set"
    code = main(["synth", "--n", "10", "--size", "32", "--scale", "4", "--seed", "1", "--out", str(out)])
    assert code == 0
    assert len(json.loads((out / "manifest.json").read_text())) == 10
    assert len(list((out / "images").glob("*_hr.ecf"))) == 10
    baseline = json.loads((out / "baseline.json").read_text())
    assert baseline["scale"] == 4 and len(baseline["per_image"]) == 10
    printed = capsys.readouterr().out
    assert f"config_hash={baseline['config_hash']}" in printed
    assert (out / "run_config.env").is_file()


def test_synth_is_byte_identical_across_runs(synthesized, toy_config):
    first = tree_bytes(synthesized)
    assert main(["synth", "--config", str(toy_config), "--seed", "5", "--out", str(synthesized)]) == 0
    assert tree_bytes(synthesized) == first


def test_unsupported_scale_is_a_usage_error(tmp_path):
    assert main(["synth", "--scale", "3", "--out", str(tmp_path)]) == 2


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    path = tmp_path / "bad.env"
    path.write_text("model.base_channels=4\nmodel.bogus_switch=1\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "model.bogus_switch" in capsys.readouterr().err


def test_missing_manifest_file_is_an_io_error(tmp_path, toy_config):
    assert main(["train", "--config", str(toy_config), "--manifest", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "run")]) == 3


# ------------------------------------------------------------ train / eval

def test_train_then_resume_continues_the_loss_curve(tmp_path, toy_config, synthesized):
    out = tmp_path / "run"
    args = ["train", "--config", str(toy_config), "--manifest", str(synthesized / "manifest.json"),
            "--out", str(out)]
    toy_config.write_text(TOY_KEYS + "train.checkpoint_every=1\n")
    assert main(args) == 0
    uninterrupted = pd.read_csv(out / "loss_curve.csv")
    assert uninterrupted["step"].tolist() == [1, 2]
    assert (out / "checkpoints" / "final.ckpt").is_file()
    assert (out / "final_metrics.csv").is_file()

    assert main(args + ["--resume", str(out / "checkpoints" / "step_000001.ckpt")]) == 0
    resumed = pd.read_csv(out / "loss_curve.csv")
    assert resumed["step"].tolist() == [1, 2]
    assert resumed["loss"].tolist() == uninterrupted["loss"].tolist()


@pytest.fixture
def identity_checkpoint(tmp_path, toy_config, synthesized):
    config = load_run_config(toy_config, {"data.manifest": str(synthesized / "manifest.json")})
    model = ECFNet(config.model)
    for p in model.parameters_dict().values():
        p.assign(np.zeros(p.shape))
    ckpt = snapshot(model.parameters_dict(), OptimizerState(), config.model_dump(mode="json"),
                    epoch=0, step=0, rng={}, config_hash=config.config_hash)
    return save_checkpoint(ckpt, tmp_path / "zero.ckpt")


def test_zero_weight_checkpoint_reproduces_the_baseline(tmp_path, synthesized, identity_checkpoint):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(identity_checkpoint), "--out", str(out), "--emit-maps"]) == 0
    metrics = pd.read_csv(out / "metrics.csv")
    baseline = json.loads((synthesized / "baseline.json").read_text())
    expected = {row["image_id"]: row["psnr_db"] for row in baseline["per_image"]}
    for image_id, value in zip(metrics["image_id"], metrics["psnr_db"]):
        assert value == pytest.approx(expected[image_id], abs=1e-9)
    assert len(list((out / "maps").glob("*_error.png"))) == 3
    assert len(list((out / "maps").glob("*_sr.png"))) == 3
    assert (out / "summary.csv").is_file()


def test_eval_against_a_different_model_config_fails(tmp_path, toy_config, identity_checkpoint):
    other = tmp_path / "other.env"
    other.write_text(TOY_KEYS.replace("model.stages=2", "model.stages=3"))
    assert main(["eval", "--checkpoint", str(identity_checkpoint), "--config", str(other)]) == 2


def test_ablate_writes_four_rows(tmp_path, toy_config, synthesized):
    toy_config.write_text(TOY_KEYS + "train.max_steps=1\n")
    out = tmp_path / "ablate"
    assert main(["ablate", "--config", str(toy_config), "--manifest", str(synthesized / "manifest.json"),
                 "--out", str(out)]) == 0
    table = pd.read_csv(out / "ablation.csv")
    assert len(table) == 4 and table["variant"].iloc[-1] == "full version"
    assert table["config_hash"].nunique() == 1


# ---------------------------------------------------------------- gradcheck

def test_operator_suite_passes(capsys):
    assert main(["gradcheck", "--ops"]) == 0
    printed = capsys.readouterr().out
    assert "deformable_conv:" in printed and "FAIL" not in printed


def broken_sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.values))
    return record_op("broken_sigmoid", (x,), out, lambda g: (g * out,))


def test_corrupted_backward_rule_is_reported(monkeypatch, capsys):
    def cases(seed=0):
        def build():
            x = Tensor(np.linspace(-1.0, 1.0, 6), name="x")
            return (lambda x: F.sum(broken_sigmoid(x))), [x]
        return [GradcheckCase("broken_sigmoid", build)]

    monkeypatch.setattr(gradcheck_suites, "operator_cases", cases)
    assert main(["gradcheck", "--ops"]) == 1
    printed = capsys.readouterr().out
    assert "broken_sigmoid:" in printed and "FAIL" in printed
    assert "0/1 gradchecks passed" in printed


# --------------------------------------------------------------- acceptance

OVERFIT_KEYS = """\
model.base_channels=8
model.scale_factor=4
phantom.size=64
data.n=10
train.lr=0.0002
train.batch_size=2
train.epochs=400
train.max_steps=2000
train.log_every=100
"""


@pytest.mark.slow
def test_tiny_model_beats_bicubic_on_its_training_set(tmp_path):
    config = tmp_path / "overfit.env"
    config.write_text(OVERFIT_KEYS)
    data, run, report = tmp_path / "data", tmp_path / "run", tmp_path / "report"
    assert main(["synth", "--config", str(config), "--seed", "0", "--out", str(data)]) == 0
    assert main(["train", "--config", str(config), "--manifest", str(data / "manifest.json"),
                 "--out", str(run)]) == 0
    assert pd.read_csv(run / "loss_curve.csv")["step"].max() <= 2000

    assert main(["eval", "--checkpoint", str(run / "checkpoints" / "final.ckpt"),
                 "--out", str(report)]) == 0
    summary = pd.read_csv(report / "summary.csv")
    baseline = json.loads((data / "baseline.json").read_text())
    assert summary["count"].iloc[0] == 10
    assert summary["psnr_mean"].iloc[0] >= baseline["mean_psnr_db"] + 1.0
