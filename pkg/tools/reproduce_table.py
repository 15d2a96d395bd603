"""
Long-running comparison of the test bound of both estimators on MNIST.

    python tools/reproduce_table.py [--config configs/sbn.cfg] [--architecture 200-200] [--out runs/table] [--set key=value]...

Trains one (generative, recognition) pair per estimator from the same config
and checks each test bound against the reference value for its architecture
and the ordering between them. The architecture defaults to the config's.
Takes days of CPU time at full scale.
"""
import argparse
import json
import sys
from pathlib import Path

from dotenv import load_dotenv

project_root = Path(__file__).parent.parent
sys.path.append(str(project_root))
load_dotenv(project_root / ".env")

from src.core.config import TrainConfig, dump_config, load_config, parse_overrides  # noqa: E402
from src.core.logging import setup_logging  # noqa: E402
from src.core.run_context import RunContext, run_scope  # noqa: E402
from src.services.training.trainer import train  # noqa: E402

GREEN = "\033[92m"
RED = "\033[91m"
RESET = "\033[0m"

# test bounds in nats on binarized MNIST, keyed by architecture
REFERENCE_BOUNDS = {
    "200-200": {"marginalized": 98.28, "lr": 98.86},
    "200-200-200": {"marginalized": 95.03, "lr": 95.40},
    "200-200-200-200": {"marginalized": 93.67, "lr": 94.82},
    "32-64-128-256": {"marginalized": 92.79, "lr": 94.73},
}
TOLERANCE = 1.0


def print_result(name, success, message=""):
    icon = f"{GREEN}✅{RESET}" if success else f"{RED}❌{RESET}"
    print(f"{icon} {name:<28} {message}")


def main():
    parser = argparse.ArgumentParser(description="Test bounds of both estimators on one architecture")
    parser.add_argument("--config", type=Path, default=project_root / "configs" / "sbn.cfg")
    parser.add_argument("--architecture", choices=sorted(REFERENCE_BOUNDS), default=None)
    parser.add_argument("--out", type=Path, default=project_root / "runs" / "table")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()

    overrides = parse_overrides(args.overrides)
    if args.architecture is not None:
        overrides["architecture"] = args.architecture
    architecture = load_config(TrainConfig, args.config, overrides).architecture
    if architecture not in REFERENCE_BOUNDS:
        print_result("architecture", False, f"no reference bounds for SBN({architecture})")
        return 2
    references = REFERENCE_BOUNDS[architecture]

    results = {}
    for estimator, reference in references.items():
        config = load_config(TrainConfig, args.config, {**overrides, "estimator": estimator})
        out_dir = args.out / estimator
        out_dir.mkdir(parents=True, exist_ok=True)
        setup_logging(log_dir=out_dir / "logs")
        (out_dir / "config.resolved.cfg").write_text(dump_config(config), encoding="utf-8")
        with run_scope(RunContext(command="reproduce-table", output_dir=out_dir, seed=config.seed)):
            report = train(config, out_dir)
        results[estimator] = report.test_bound
        if report.test_bound is None:
            print_result(f"{estimator} test bound", False, "no test split")
            continue
        close = abs(report.test_bound - reference) <= TOLERANCE
        print_result(f"{estimator} test bound", close, f"{report.test_bound:.2f} nats (reference {reference:.2f} ± {TOLERANCE})")

    ordered = None not in results.values() and results["marginalized"] <= results["lr"]
    print_result("marginalized <= lr", ordered, json.dumps(results))
    (args.out / "table.json").write_text(json.dumps({"architecture": architecture, "bounds": results, "reference": references}, indent=2), encoding="utf-8")
    return 0 if ordered else 1


if __name__ == "__main__":
    sys.exit(main())
