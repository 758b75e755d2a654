"""
ecfnet command line: synth, train, eval, ablate, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 I/O error,
4 numerical abort.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autograd import run_suite
from ..config import RunConfig, load_run_config, write_run_config
from ..data.dataset import ImagePair, bicubic_baseline, load_manifest, make_dataset, split_holdout, write_dataset
from ..data.image_io import write_png
from ..errors import ConfigError, EcfError, GradcheckFailure
from ..metrics.quality import capped_psnr, error_map, summarize, write_report
from ..ml import gradcheck_suites
from ..ml.checkpoint import check_model_config, load_checkpoint
from ..ml.model import ECFNet
from ..ml.trainer import evaluate, load_params, predict, run_ablation, train, write_loss_curve
from ..utils.logger import get_logger, log_performance
from ..utils.retry import durable_write

logger = get_logger("cli")


def _overrides(args: argparse.Namespace, mapping: Dict[str, str]) -> Dict[str, str]:
    return {key: str(getattr(args, attr)) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


def _load_config(args: argparse.Namespace, mapping: Dict[str, str]) -> RunConfig:
    return load_run_config(getattr(args, "config", None), _overrides(args, mapping))


def _announce(config: RunConfig, command: str) -> str:
    digest = config.config_hash
    print(f"config_hash={digest}")
    logger.info("Command started", command=command, config_hash=digest)
    return digest


@durable_write
def _write_json(payload: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _dataset(config: RunConfig) -> List[ImagePair]:
    if config.data.manifest:
        pairs = load_manifest(Path(config.data.manifest))
    else:
        pairs = make_dataset(config.data.n, config.phantom, config.model.scale_factor)
    scales = {p.scale for p in pairs}
    if scales != {config.model.scale_factor}:
        raise ConfigError(f"dataset scales {sorted(scales)} do not match model.scale_factor="
                          f"{config.model.scale_factor}", key="model.scale_factor")
    return pairs


# ------------------------------------------------------------------ commands

@log_performance(logger, "synth")
def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args, {"n": "data.n", "size": "phantom.size", "scale": "model.scale_factor",
                                 "seed": "phantom.seed", "out": "output_dir"})
    digest = _announce(config, "synth")
    out = Path(config.output_dir)
    pairs = make_dataset(config.data.n, config.phantom, config.model.scale_factor)
    manifest = write_dataset(pairs, out, png_previews=args.png)
    scores = bicubic_baseline(pairs, config.model.dtype, config.model.interpolation)
    mean_db = float(np.mean([capped_psnr(s) for s in scores]))
    _write_json({
        "config_hash": digest,
        "scale": config.model.scale_factor,
        "mean_psnr_db": mean_db,
        "per_image": [{"image_id": p.image_id, "psnr_db": capped_psnr(s)} for p, s in zip(pairs, scores)],
    }, out / "baseline.json")
    write_run_config(config, out)
    print(f"wrote {len(pairs)} pairs to {manifest}")
    print(f"bicubic baseline: mean PSNR {mean_db:.3f} dB over {len(pairs)} pairs (x{config.model.scale_factor})")
    return 0


@log_performance(logger, "train")
def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args, {"manifest": "data.manifest", "out": "output_dir"})
    digest = _announce(config, "train")
    out = Path(config.output_dir)
    write_run_config(config, out)
    train_pairs, held_out = split_holdout(_dataset(config), config.data.holdout)

    model = ECFNet(config.model, seed=config.train.seed)
    resume = load_checkpoint(Path(args.resume), expected=config.model) if args.resume else None
    result = train(model, train_pairs, config.train, resume=resume, checkpoint_dir=out / "checkpoints",
                   run_config=config.model_dump(mode="json"), config_hash=digest)
    write_loss_curve(result.loss_curve, out / "loss_curve.csv",
                     after_step=resume.step if resume is not None else None)

    records = evaluate(model, held_out, digest)
    write_report(records, out, "final_metrics")
    summary = summarize(records)
    print(f"trained {result.step} steps; final checkpoint {result.checkpoints[-1]}")
    print(summary.to_string(index=False))
    return 0


@log_performance(logger, "eval")
def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    if args.config:
        config = _load_config(args, {"manifest": "data.manifest", "out": "output_dir"})
        check_model_config(ckpt, config.model)
    else:
        manifest = str(args.manifest) if args.manifest else ckpt.config.get("data", {}).get("manifest")
        config = RunConfig.model_validate({**ckpt.config, "data": {**ckpt.config.get("data", {}),
                                                                    "manifest": manifest}})
    digest = _announce(config, "eval")
    if not config.data.manifest:
        raise ConfigError("eval needs --manifest or data.manifest", key="data.manifest")
    out = Path(args.out or Path(config.output_dir) / "eval")

    model = ECFNet(config.model, seed=config.train.seed)
    load_params(model, ckpt.params)
    pairs = load_manifest(Path(config.data.manifest))
    records = evaluate(model, pairs, digest)
    write_report(records, out, "metrics")
    summary = summarize(records)
    summary.to_csv(out / "summary.csv", index=False)
    write_run_config(config, out)

    if args.emit_maps:
        maps = out / "maps"
        maps.mkdir(parents=True, exist_ok=True)
        for pair in pairs:
            sr, struct = predict(model, pair)
            write_png(sr, maps / f"{pair.image_id}_sr.png")
            if struct is not None:
                write_png(struct, maps / f"{pair.image_id}_struct.png")
            write_png(error_map(sr, pair.hr), maps / f"{pair.image_id}_error.png")
    print(summary.to_string(index=False))
    return 0


@log_performance(logger, "ablate")
def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args, {"manifest": "data.manifest", "out": "output_dir"})
    digest = _announce(config, "ablate")
    out = Path(config.output_dir)
    train_pairs, held_out = split_holdout(_dataset(config), config.data.holdout)
    table = run_ablation(train_pairs, held_out, config)
    table.insert(len(table.columns), "config_hash", digest)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "ablation.csv", index=False)
    _write_json({"config_hash": digest, "rows": table.to_dict(orient="records")}, out / "ablation.json")
    write_run_config(config, out)
    print(table.drop(columns=["config_hash"]).to_string(index=False))
    return 0


@log_performance(logger, "gradcheck")
def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _load_config(args, {})
    _announce(config, "gradcheck")
    run_ops = args.ops or not args.e2e
    run_e2e = args.e2e or not args.ops
    cases = []
    if run_ops:
        cases += gradcheck_suites.operator_cases(args.seed)
    if run_e2e:
        cases += gradcheck_suites.e2e_cases(args.seed)
    if args.tol is not None:
        for case in cases:
            case.tol = args.tol

    failures = 0
    for report in run_suite(cases):
        status = "PASS" if report.passed else "FAIL"
        print(f"{report.name}: max_rel_error={report.max_rel_error:.3e} tol={report.tol:.0e} {status}")
        if not report.passed:
            failures += 1
            logger.error("Gradcheck failed", error=GradcheckFailure(report.name, report.max_rel_error, report.tol))
    print(f"{len(cases) - failures}/{len(cases)} gradchecks passed")
    return 1 if failures else 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecfnet", description="Reference-guided MRI super-resolution kit")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthesize phantom pairs and a manifest")
    synth.add_argument("--config", type=Path)
    synth.add_argument("--n", type=int)
    synth.add_argument("--size", type=int)
    synth.add_argument("--scale", type=int, choices=[2, 4])
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out", type=Path)
    synth.add_argument("--png", action="store_true", help="also write PNG previews")
    synth.set_defaults(handler=cmd_synth)

    train_p = sub.add_parser("train", help="train ECFNet")
    train_p.add_argument("--config", type=Path)
    train_p.add_argument("--manifest", type=Path)
    train_p.add_argument("--resume", type=Path)
    train_p.add_argument("--out", type=Path)
    train_p.set_defaults(handler=cmd_train)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    eval_p.add_argument("--checkpoint", type=Path, required=True)
    eval_p.add_argument("--manifest", type=Path)
    eval_p.add_argument("--config", type=Path)
    eval_p.add_argument("--emit-maps", dest="emit_maps", action="store_true")
    eval_p.add_argument("--out", type=Path)
    eval_p.set_defaults(handler=cmd_eval)

    ablate = sub.add_parser("ablate", help="train and compare the module-ablation variants")
    ablate.add_argument("--config", type=Path)
    ablate.add_argument("--manifest", type=Path)
    ablate.add_argument("--out", type=Path)
    ablate.set_defaults(handler=cmd_ablate)

    grad = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    grad.add_argument("--config", type=Path)
    grad.add_argument("--ops", action="store_true")
    grad.add_argument("--e2e", action="store_true")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--tol", type=float)
    grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except EcfError as exc:
        logger.error("Command failed", error=exc, command=args.command)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O failure", error=exc, command=args.command)
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
