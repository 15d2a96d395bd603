"""
Variational training of SBN (generative, recognition) pairs

Each update draws one reparameterized sample per minibatch element, takes
the analytic generative gradient on it, estimates the recognition gradient
with the configured estimator, and steps both nets with RMSprop. The bound is
evaluated on the validation split at step 0 and every validation_interval
updates; every evaluation is checkpointed and the best one is used for the
final test bound.
"""
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.core.config import TrainConfig, settings
from src.core.errors import CheckpointFormatError, EmptyDatasetError
from src.core.seeding import Stream, derive_rng, derive_seed
from src.services.data.datasets import BinaryDataset, Split, load_mnist
from src.services.data.synthetic import synthetic_dataset
from src.services.estimators.baseline import BaselineModel, update_baseline
from src.services.estimators.likelihood_ratio import lr_signals
from src.services.estimators.marginalized import marginalized_signals
from src.services.objective.elbo import ForwardPass, evaluate_sample, grad_generative
from src.services.sbn.checkpoint import load_pair, save_models
from src.services.sbn.gradients import GradientAccumulator
from src.services.sbn.network import Direction, ModelParams, NoiseState, Topology, init_params
from src.services.training.evaluation import evaluate_bound
from src.services.training.rmsprop import RmsPropState, rmsprop_step

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
CHECKPOINT_DIR = "checkpoints"
INDEX_FILE = "index.json"
METRIC_COLUMNS = ["step", "split", "metric", "value"]

# evaluation noise counters; fixed so every validation sees the same noise
VALID_EVAL_COUNTER = 0
TEST_EVAL_COUNTER = 1


@dataclass
class TrainingReport:
    estimator: str
    steps: int
    best_step: int
    best_valid_bound: float
    test_bound: Optional[float]
    valid_history: List[Tuple[int, float]] = field(default_factory=list)
    output_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def load_training_data(config: TrainConfig) -> BinaryDataset:
    if config.dataset == "synthetic":
        return synthetic_dataset(
            config.synthetic_images,
            config.synthetic_dim,
            config.synthetic_seed,
            architecture=config.synthetic_architecture,
            valid_fraction=config.synthetic_valid_fraction,
            test_fraction=config.synthetic_test_fraction,
        )
    return load_mnist(config.mnist_dir or settings.MNIST_DIR, derive_seed(config.binarize_seed, Stream.BINARIZE))


def initial_models(config: TrainConfig, data_size: int) -> Tuple[ModelParams, ModelParams]:
    """Fresh (gen, rec) pair, or the pair stored in config.checkpoint."""
    if config.checkpoint:
        gen, rec, _ = load_pair(resolve_checkpoint(config.checkpoint))
        return gen.astype(config.dtype), rec.astype(config.dtype)
    sizes = config.latent_sizes
    gen = init_params(
        Topology(tuple(sizes), data_size, Direction.GENERATIVE),
        config.init_scale,
        derive_seed(config.seed, Stream.INIT_GENERATIVE),
        dtype=config.dtype,
    )
    rec = init_params(
        Topology(tuple(sizes), data_size, Direction.RECOGNITION),
        config.init_scale,
        derive_seed(config.seed, Stream.INIT_RECOGNITION),
        dtype=config.dtype,
    )
    return gen, rec


def resolve_checkpoint(path: Union[str, Path]) -> Path:
    """A checkpoint file, or a run/checkpoint directory resolved to its best checkpoint."""
    path = Path(path)
    if path.is_file():
        return path
    for directory in (path / CHECKPOINT_DIR, path):
        index = directory / INDEX_FILE
        if index.exists():
            try:
                best = json.loads(index.read_text(encoding="utf-8"))["best_checkpoint"]
            except (KeyError, json.JSONDecodeError) as e:
                raise CheckpointFormatError(f"Corrupt checkpoint index {index}: {e}") from e
            return directory / best
    raise FileNotFoundError(f"No checkpoint at {path}")


def baseline_path_for(checkpoint: Path) -> Optional[Path]:
    """Baseline stored alongside a training checkpoint, if any."""
    step = checkpoint.stem.rsplit("_", 1)[-1]
    candidate = checkpoint.with_name(f"baseline_{step}.pt")
    return candidate if candidate.exists() else None


class Trainer:
    """
    One training run writing metrics and checkpoints under out_dir.
    """

    def __init__(self, config: TrainConfig, out_dir: Union[str, Path], dataset: Optional[BinaryDataset] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.checkpoint_dir = self.out_dir / CHECKPOINT_DIR
        self.dataset = dataset if dataset is not None else load_training_data(config)
        self.dtype = np.dtype(config.dtype)

        self.train_images = self.dataset.subset(Split.TRAIN, config.train_limit)
        self.valid_images = self.dataset.subset(Split.VALID, config.valid_limit)
        self.gen, self.rec = initial_models(config, self.dataset.data_size)

        optimizer = dict(
            learning_rate=config.learning_rate,
            decay=config.rmsprop_decay,
            eps=config.rmsprop_eps,
            weight_decay=config.weight_decay,
        )
        self.gen_state = RmsPropState.for_params(self.gen, **optimizer)
        self.rec_state = RmsPropState.for_params(self.rec, **optimizer)

        self.baseline: Optional[BaselineModel] = None
        if config.estimator == "lr":
            self.baseline = BaselineModel.for_recognition(
                self.rec,
                hidden_dim=config.baseline_hidden,
                decay=config.baseline_decay,
                seed=derive_seed(config.seed, Stream.BASELINE),
                rmsprop_decay=config.rmsprop_decay,
                rmsprop_eps=config.rmsprop_eps,
            )

        self.metrics: List[Dict[str, Any]] = []
        self.timing: List[Dict[str, Any]] = []
        self.checkpoints: Dict[int, str] = {}
        self.valid_history: List[Tuple[int, float]] = []
        self.best_step = -1
        self.best_bound = float("inf")
        self._train_bounds: List[float] = []
        self._started = 0.0

    @property
    def total_steps(self) -> int:
        per_epoch = -(-self.train_images.shape[0] // self.config.batch_size)
        total = self.config.epochs * per_epoch
        if self.config.max_updates > 0:
            total = min(total, self.config.max_updates)
        return total

    def recognition_gradient(self, forward: ForwardPass, noise: NoiseState) -> GradientAccumulator:
        config = self.config
        if config.estimator == "marginalized":
            differences = marginalized_signals(
                self.gen, self.rec, forward.x, noise,
                unit_chunk=config.unit_chunk, threads=config.threads, forward=forward,
            )
            return differences.logit_signals(config.include_direct_term).to_gradient(self.rec)

        signals = lr_signals(self.gen, self.rec, forward.x, noise, self.baseline, forward=forward)
        grad = signals.to_logit_signals(config.include_direct_term).to_gradient(self.rec)
        update_baseline(self.baseline, signals, config.learning_rate)
        return grad

    def update(self, step: int, batch: np.ndarray) -> float:
        """One minibatch update; returns the minibatch bound before the step."""
        x = batch.astype(self.dtype)
        noise = NoiseState.draw(
            self.rec.topology, derive_rng(self.config.seed, Stream.NOISE, step), batch=x.shape[0], dtype=self.dtype
        )
        forward = evaluate_sample(self.gen, self.rec, x, noise)
        gen_grad = grad_generative(self.gen, forward.x, forward.sample())
        rec_grad = self.recognition_gradient(forward, noise)
        gen_grad.check_finite(step)
        rec_grad.check_finite(step)

        # ascent on the bound is descent on its negative
        self.gen, _ = rmsprop_step(self.gen, -gen_grad, self.gen_state)
        self.rec, _ = rmsprop_step(self.rec, -rec_grad, self.rec_state)
        bound = float(-forward.f.mean())
        logger.debug(f"Step {step}: minibatch bound {bound:.4f}")
        return bound

    def _record(self, step: int, split: str, metric: str, value: float) -> None:
        self.metrics.append({"step": step, "split": split, "metric": metric, "value": value})

    def _flush(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.metrics, columns=METRIC_COLUMNS).to_csv(self.out_dir / METRICS_FILE, index=False)
        pd.DataFrame(self.timing, columns=METRIC_COLUMNS).to_csv(self.out_dir / TIMING_FILE, index=False)

    def _checkpoint(self, step: int, bound: float) -> None:
        name = f"step_{step}.npz"
        save_models(
            self.checkpoint_dir / name,
            {"gen": self.gen, "rec": self.rec},
            {"step": step, "valid_bound": bound, "estimator": self.config.estimator},
        )
        if self.baseline is not None:
            self.baseline.save(self.checkpoint_dir / f"baseline_{step}.pt")
        self.checkpoints[step] = name
        index = {
            "best_step": self.best_step,
            "best_checkpoint": self.checkpoints[self.best_step],
            "best_valid_bound": self.best_bound,
            "checkpoints": [{"step": s, "file": f} for s, f in sorted(self.checkpoints.items())],
        }
        (self.checkpoint_dir / INDEX_FILE).write_text(json.dumps(index, indent=2), encoding="utf-8")

    def validate(self, step: int) -> float:
        bound = evaluate_bound(
            self.gen, self.rec, self.valid_images, self.config.valid_samples,
            derive_seed(self.config.seed, Stream.EVALUATION, VALID_EVAL_COUNTER), self.config.threads,
        )
        if self._train_bounds:
            self._record(step, "train", "bound", float(np.mean(self._train_bounds)))
            self._train_bounds = []
        self._record(step, "valid", "bound", bound)
        self.timing.append({"step": step, "split": "valid", "metric": "wall_time", "value": time.perf_counter() - self._started})
        self.valid_history.append((step, bound))

        if bound < self.best_bound or self.best_step < 0:
            self.best_bound, self.best_step = bound, step
        self._checkpoint(step, bound)
        self._flush()
        logger.info(f"Step {step}: validation bound {bound:.4f} nats (best {self.best_bound:.4f} at step {self.best_step})")
        return bound

    def test(self) -> Optional[float]:
        try:
            images = self.dataset.subset(Split.TEST, self.config.test_limit)
        except EmptyDatasetError:
            logger.info("No test split; skipping the test bound")
            return None
        gen, rec, _ = load_pair(self.checkpoint_dir / self.checkpoints[self.best_step])
        bound = evaluate_bound(
            gen, rec, images, self.config.test_samples,
            derive_seed(self.config.seed, Stream.EVALUATION, TEST_EVAL_COUNTER), self.config.threads,
        )
        self._record(self.best_step, "test", "bound", bound)
        self._flush()
        logger.info(f"Test bound {bound:.4f} nats from step {self.best_step}")
        return bound

    def run(self) -> TrainingReport:
        config = self.config
        total = self.total_steps
        logger.info(
            f"Training SBN({config.architecture}) with the {config.estimator} estimator: "
            f"{self.train_images.shape[0]} train / {self.valid_images.shape[0]} valid images, {total} updates"
        )
        self._started = time.perf_counter()
        self.validate(0)

        step = 0
        n = self.train_images.shape[0]
        epoch = 0
        while step < total:
            order = derive_rng(config.seed, Stream.SHUFFLE, epoch).permutation(n)
            for start in range(0, n, config.batch_size):
                if step >= total:
                    break
                self._train_bounds.append(self.update(step, self.train_images[order[start:start + config.batch_size]]))
                step += 1
                if step % config.validation_interval == 0:
                    self.validate(step)
            epoch += 1
        if step not in self.checkpoints:
            self.validate(step)

        # a run without updates reports only its initial validation bound
        test_bound = self.test() if step > 0 else None
        return TrainingReport(
            estimator=config.estimator,
            steps=step,
            best_step=self.best_step,
            best_valid_bound=self.best_bound,
            test_bound=test_bound,
            valid_history=list(self.valid_history),
            output_dir=str(self.out_dir),
        )


def train(config: TrainConfig, out_dir: Union[str, Path], dataset: Optional[BinaryDataset] = None) -> TrainingReport:
    return Trainer(config, out_dir, dataset).run()
