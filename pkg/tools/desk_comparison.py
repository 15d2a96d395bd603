"""
Desk-scale comparison of both estimators over several seeds.

    python tools/desk_comparison.py [--config configs/desk.cfg] [--out runs/desk] [--seeds 0 1 2 3 4] [--set key=value]...

Trains SBN(16-32) with each estimator per seed, then checks that the
marginalized final validation bound is at least as good in --min-wins seeds
and that, at mid-training, its per-layer variance is lower than LR's in every
layer and at least --min-ratio times lower in one. The measured ratios are
printed for every seed. Takes tens of minutes.
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
from src.services.training.comparison import COMPARISON_FILE, compare_estimators  # noqa: E402

GREEN = "\033[92m"
RED = "\033[91m"
RESET = "\033[0m"


def print_result(name, success, message=""):
    icon = f"{GREEN}✅{RESET}" if success else f"{RED}❌{RESET}"
    print(f"{icon} {name:<28} {message}")


def main():
    parser = argparse.ArgumentParser(description="Final bounds and mid-training variance of both estimators")
    parser.add_argument("--config", type=Path, default=project_root / "configs" / "desk.cfg")
    parser.add_argument("--out", type=Path, default=project_root / "runs" / "desk")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--min-wins", type=int, default=4)
    parser.add_argument("--min-ratio", type=float, default=10.0)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()

    config = load_config(TrainConfig, args.config, parse_overrides(args.overrides))
    args.out.mkdir(parents=True, exist_ok=True)
    setup_logging(log_dir=args.out / "logs")
    (args.out / "config.resolved.cfg").write_text(dump_config(config), encoding="utf-8")

    print(f"Comparing estimators on SBN({config.architecture}) over seeds {args.seeds}...")
    with run_scope(RunContext(command="desk-comparison", output_dir=args.out, seed=config.seed)):
        report = compare_estimators(config, args.out, args.seeds)

    passed = True
    for item in report.seeds:
        bounds = item.final_bounds
        print_result(
            f"seed {item.seed} bound", item.marginalized_wins,
            f"marginalized {bounds['marginalized']:.3f} / lr {bounds['lr']:.3f} nats",
        )
        ratios = item.variance_ratios
        ordered = item.lower_in_every_layer and max(ratios) >= args.min_ratio
        passed &= ordered
        print_result(
            f"seed {item.seed} variance", ordered,
            "lr / marginalized per layer: " + ", ".join(f"h{i + 1} {ratio:.3g}" for i, ratio in enumerate(ratios)),
        )

    wins = report.wins >= args.min_wins
    passed &= wins
    print_result("marginalized wins", wins, f"{report.wins}/{len(report.seeds)} (need {args.min_wins})")
    summary = {
        "wins": report.wins,
        "seeds": [
            {"seed": item.seed, "final_bounds": item.final_bounds, "variance_ratios": item.variance_ratios,
             "profile_steps": item.profile_steps}
            for item in report.seeds
        ],
        "table": str(args.out / COMPARISON_FILE),
    }
    (args.out / "desk.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
