"""
Wall-clock cost of one marginalized minibatch against one LR minibatch.

    python tools/benchmark_estimators.py [--architecture 200-200] [--batch-size 100] [--threads 4]

The single-threaded ratio must stay under --max-ratio; the ratio with
parallel unit chunks is reported for inspection.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

project_root = Path(__file__).parent.parent
sys.path.append(str(project_root))
load_dotenv(project_root / ".env")

from src.core.logging import setup_logging  # noqa: E402
from src.core.seeding import Stream, derive_rng, derive_seed  # noqa: E402
from src.services.estimators.baseline import BaselineModel, update_baseline  # noqa: E402
from src.services.estimators.likelihood_ratio import lr_signals  # noqa: E402
from src.services.estimators.marginalized import marginalized_signals  # noqa: E402
from src.services.objective.elbo import evaluate_sample  # noqa: E402
from src.services.sbn.network import Direction, NoiseState, Topology, random_params  # noqa: E402

GREEN = "\033[92m"
RED = "\033[91m"
YELLOW = "\033[93m"
RESET = "\033[0m"

MNIST_PIXELS = 784


def print_result(name, success, message=""):
    icon = f"{GREEN}✅{RESET}" if success else f"{RED}❌{RESET}"
    print(f"{icon} {name:<28} {message}")


def time_call(fn, repeats):
    fn()  # warm caches
    started = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - started) / repeats


def main():
    parser = argparse.ArgumentParser(description="Marginalized vs LR minibatch wall-clock ratio")
    parser.add_argument("--architecture", default="200-200")
    parser.add_argument("--data-size", type=int, default=MNIST_PIXELS)
    parser.add_argument("--batch-size", type=int, default=100)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--max-ratio", type=float, default=30.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    setup_logging(level="WARNING")
    gen = random_params(
        Topology.from_architecture(args.architecture, args.data_size, Direction.GENERATIVE),
        derive_seed(args.seed, Stream.INIT_GENERATIVE),
    )
    rec = random_params(
        Topology.from_architecture(args.architecture, args.data_size, Direction.RECOGNITION),
        derive_seed(args.seed, Stream.INIT_RECOGNITION),
    )
    rng = derive_rng(args.seed, Stream.DATA)
    x = rng.integers(0, 2, size=(args.batch_size, args.data_size)).astype(np.float64)
    noise = NoiseState.draw(rec.topology, rng, batch=args.batch_size)
    forward = evaluate_sample(gen, rec, x, noise)
    baseline = BaselineModel.for_recognition(rec, seed=derive_seed(args.seed, Stream.BASELINE))

    print(f"Benchmarking SBN({args.architecture}) on {args.data_size} pixels, batch {args.batch_size}...")

    def lr_step():
        signals = lr_signals(gen, rec, x, noise, baseline, forward=forward)
        signals.to_logit_signals().to_gradient(rec)
        update_baseline(baseline, signals, 1e-3)

    def marginalized_step(threads):
        return lambda: marginalized_signals(gen, rec, x, noise, threads=threads, forward=forward).logit_signals().to_gradient(rec)

    lr_time = time_call(lr_step, args.repeats)
    serial_time = time_call(marginalized_step(1), args.repeats)
    parallel_time = time_call(marginalized_step(args.threads), args.repeats)

    serial_ratio = serial_time / lr_time
    print_result("LR minibatch", True, f"{lr_time * 1e3:.1f} ms")
    print_result("Marginalized (1 thread)", serial_ratio <= args.max_ratio, f"{serial_time * 1e3:.1f} ms ({serial_ratio:.1f}x LR)")
    print(f"{YELLOW}ℹ️  Marginalized ({args.threads} threads): {parallel_time * 1e3:.1f} ms ({parallel_time / lr_time:.1f}x LR){RESET}")
    return 0 if serial_ratio <= args.max_ratio else 1


if __name__ == "__main__":
    sys.exit(main())
