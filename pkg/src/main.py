"""
margrad command-line entry point

    python -m src {train,verify,profile-variance,eval} --config PATH
        [--set key=value]... [--out DIR] [--threads N] [--seed N]

Exit codes: 0 success, 1 runtime error or failed checks, 2 usage or config
error. Errors are reported as one JSON line on stderr.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence, Type

import numpy as np
import pandas as pd

from src.core.config import TrainConfig, VerifyConfig, dump_config, load_config, parse_overrides, settings
from src.core.errors import ConfigError, MargradError
from src.core.logging import setup_logging
from src.core.parallel import set_thread_cap
from src.core.run_context import RunContext, run_scope
from src.core.seeding import Stream, derive_seed
from src.services.data.datasets import Split
from src.services.estimators.baseline import BaselineModel
from src.services.oracle.suite import REPORT_FILE, run_verification
from src.services.sbn.checkpoint import load_pair
from src.services.training.evaluation import per_image_bounds
from src.services.training.profiler import profile_variance, warm_baseline
from src.services.training.trainer import (
    TEST_EVAL_COUNTER,
    baseline_path_for,
    load_training_data,
    resolve_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
RESOLVED_CONFIG = "config.resolved.cfg"
PROFILE_FILE = "variance_profile.csv"
EVAL_FILE = "eval.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="margrad", description="Gradient estimators for sigmoid belief networks")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in (
        ("train", "train a (generative, recognition) pair"),
        ("verify", "run the brute-force verification suite"),
        ("profile-variance", "per-layer gradient variance of each estimator"),
        ("eval", "test bound of a checkpoint"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", type=Path, default=None, help="flat key = value config file")
        command.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        command.add_argument("--out", type=Path, default=None, help="output directory")
        command.add_argument("--threads", type=int, default=None)
        command.add_argument("--seed", type=int, default=None)
    return parser


def _load(schema: Type, args: argparse.Namespace):
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    return load_config(schema, args.config, overrides)


def _run_verify(config: VerifyConfig, out_dir: Path) -> int:
    records = run_verification(config, out_dir)
    failed = sum(not record.passed for record in records)
    print(json.dumps({"checks": len(records), "failed": failed, "report": str(out_dir / REPORT_FILE)}))
    return EXIT_FAILURE if failed else EXIT_OK


def _run_train(config: TrainConfig, out_dir: Path) -> int:
    report = train(config, out_dir)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def _load_checkpoint(config: TrainConfig):
    if not config.checkpoint:
        raise ConfigError("This command needs `checkpoint` (a checkpoint file or training output directory)")
    path = resolve_checkpoint(config.checkpoint)
    gen, rec, metadata = load_pair(path)
    return path, gen, rec, metadata


def _run_profile(config: TrainConfig, out_dir: Path) -> int:
    path, gen, rec, _ = _load_checkpoint(config)
    dataset = load_training_data(config)
    images = dataset.subset(Split.TRAIN, config.profile_images)

    baseline = None
    if "lr" in config.profile_estimator_ids:
        stored = baseline_path_for(path)
        if stored is not None:
            baseline = BaselineModel.load(stored)
        else:
            baseline = warm_baseline(
                gen, rec, images, config.profile_baseline_updates,
                seed=derive_seed(config.seed, Stream.BASELINE),
                batch_size=config.batch_size,
                step_size=config.learning_rate,
                hidden_dim=config.baseline_hidden,
                decay=config.baseline_decay,
            )

    reports = profile_variance(
        gen, rec, images, config.profile_samples_per_image, config.profile_estimator_ids,
        seed=derive_seed(config.seed, Stream.PROFILE), space=config.profile_space,
        baseline=baseline, threads=config.threads,
    )
    frame = pd.concat([report.to_frame() for report in reports.values()], ignore_index=True)
    frame.to_csv(out_dir / PROFILE_FILE, index=False)
    print(frame.to_string(index=False))
    return EXIT_OK


def _run_eval(config: TrainConfig, out_dir: Path) -> int:
    path, gen, rec, metadata = _load_checkpoint(config)
    dataset = load_training_data(config)
    images = dataset.subset(Split.TEST, config.test_limit)
    bounds = per_image_bounds(
        gen, rec, images, config.test_samples,
        derive_seed(config.seed, Stream.EVALUATION, TEST_EVAL_COUNTER), config.threads,
    )
    result = {
        "checkpoint": str(path),
        "step": metadata.get("step"),
        "images": int(bounds.shape[0]),
        "samples": config.test_samples,
        "test_bound": float(bounds.mean()),
        "stderr": float(bounds.std(ddof=1) / np.sqrt(bounds.shape[0])) if bounds.shape[0] > 1 else 0.0,
    }
    (out_dir / EVAL_FILE).write_text(json.dumps(result, indent=2), encoding="utf-8")
    print(json.dumps(result))
    return EXIT_OK


COMMANDS: Dict[str, tuple] = {
    "train": (TrainConfig, _run_train),
    "verify": (VerifyConfig, _run_verify),
    "profile-variance": (TrainConfig, _run_profile),
    "eval": (TrainConfig, _run_eval),
}


def _report_error(kind: str, error: BaseException) -> None:
    print(json.dumps({"error": kind, "message": str(error)}), file=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    schema, handler = COMMANDS[args.command]
    try:
        config = _load(schema, args)
    except ConfigError as e:
        _report_error("ConfigError", e)
        return EXIT_USAGE

    out_dir = args.out or Path(settings.OUTPUT_DIR) / args.command
    out_dir.mkdir(parents=True, exist_ok=True)
    set_thread_cap(args.threads)
    setup_logging(log_dir=out_dir / "logs")
    (out_dir / RESOLVED_CONFIG).write_text(dump_config(config), encoding="utf-8")

    with run_scope(RunContext(command=args.command, output_dir=out_dir, seed=config.seed)):
        try:
            return handler(config, out_dir)
        except ConfigError as e:
            _report_error("ConfigError", e)
            return EXIT_USAGE
        except (MargradError, OSError) as e:
            _report_error(type(e).__name__, e)
            return EXIT_FAILURE
        finally:
            set_thread_cap(None)


def main() -> None:
    sys.exit(run())
