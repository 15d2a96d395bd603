"""
Configuration management using Pydantic Settings

Two layers:
- Settings: process-level environment (log level, default directories)
- TrainConfig / VerifyConfig: strict experiment schemas loaded from flat
  `key = value` files, with `--set key=value` overrides
"""
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.errors import ConfigError

PROFILE_ESTIMATORS = ("marginalized", "lr")

class Settings(BaseSettings):
    # Application
    APP_ENV: str = "development"
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_JSON: bool = False

    # Execution
    DEFAULT_THREADS: int = 1

    # Data
    MNIST_DIR: str = "./data/mnist"
    OUTPUT_DIR: str = "./runs"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MARGRAD_",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


class _StrictConfig(BaseModel):
    """Flat experiment config; unknown keys are errors."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TrainConfig(_StrictConfig):
    """Variational training, evaluation and variance profiling of SBNs."""

    # Model
    architecture: str = "200-200"
    estimator: Literal["marginalized", "lr"] = "marginalized"
    init_scale: float = Field(0.01, gt=0)
    include_direct_term: bool = False
    dtype: Literal["float64", "float32"] = "float64"

    # Optimization
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(100, ge=1)
    weight_decay: float = Field(1e-3, ge=0)
    rmsprop_decay: float = Field(0.9, gt=0, lt=1)
    rmsprop_eps: float = Field(1e-8, gt=0)
    epochs: int = Field(1, ge=0)
    max_updates: int = Field(0, ge=0)  # 0 = no cap
    validation_interval: int = Field(1000, ge=1)

    # Baseline (lr estimator only)
    baseline_decay: float = Field(0.9, ge=0, lt=1)
    baseline_hidden: int = Field(100, ge=1)

    # Bound evaluation
    valid_samples: int = Field(1, ge=1)
    test_samples: int = Field(100, ge=1)

    # Data
    dataset: Literal["mnist", "synthetic"] = "mnist"
    mnist_dir: str = ""
    binarize_seed: int = 0
    train_limit: int = Field(0, ge=0)
    valid_limit: int = Field(0, ge=0)
    test_limit: int = Field(0, ge=0)
    synthetic_images: int = Field(3000, ge=1)
    synthetic_dim: int = Field(64, ge=1, le=64)
    synthetic_architecture: str = "8"
    synthetic_seed: int = 0
    synthetic_valid_fraction: float = Field(0.1, ge=0, lt=1)
    synthetic_test_fraction: float = Field(0.1, ge=0, lt=1)

    # Execution
    seed: int = 0
    threads: int = Field(1, ge=1)
    unit_chunk: int = Field(0, ge=0)  # 0 = sized automatically
    checkpoint: str = ""

    # Variance profiling
    profile_estimators: str = "marginalized,lr"
    profile_images: int = Field(50, ge=1)
    profile_samples_per_image: int = Field(1000, ge=2)
    profile_space: Literal["mean", "logit"] = "mean"
    profile_baseline_updates: int = Field(500, ge=0)

    @field_validator("architecture", "synthetic_architecture")
    @classmethod
    def _check_architecture(cls, value: str) -> str:
        parse_architecture(value)
        return value

    @field_validator("profile_estimators")
    @classmethod
    def _check_profile_estimators(cls, value: str) -> str:
        ids = [item.strip() for item in value.split(",") if item.strip()]
        if not ids:
            raise ValueError("needs at least one estimator")
        unknown = [item for item in ids if item not in PROFILE_ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimator(s) {', '.join(unknown)}; expected {', '.join(PROFILE_ESTIMATORS)}")
        return value

    @property
    def latent_sizes(self) -> List[int]:
        return parse_architecture(self.architecture)

    @property
    def profile_estimator_ids(self) -> List[str]:
        return [item.strip() for item in self.profile_estimators.split(",") if item.strip()]


class VerifyConfig(_StrictConfig):
    """Brute-force verification suite on small random models."""

    seed: int = 0
    models: int = Field(20, ge=1)
    max_units: int = Field(10, ge=1, le=20)
    data_size: int = Field(4, ge=1)
    weight_scale: float = Field(1.0, gt=0)
    bias_scale: float = Field(0.5, ge=0)
    trials: int = Field(100_000, ge=1000)
    chunk: int = Field(10_000, ge=1)
    finite_diff_step: float = Field(1e-5, ge=1e-7, le=1e-3)
    finite_diff_tolerance: float = Field(1e-6, gt=0)
    mean_z: float = Field(4.0, gt=0)
    variance_z: float = Field(3.0, gt=0)
    family_alpha: float = Field(1e-3, gt=0, lt=1)
    crn_tolerance: float = Field(1e-9, gt=0)
    lemma_tables: int = Field(100, ge=1)
    lemma_tolerance: float = Field(1e-12, gt=0)
    threads: int = Field(1, ge=1)


ConfigT = TypeVar("ConfigT", bound=_StrictConfig)


def parse_architecture(text: str) -> List[int]:
    """Parse `H_L-...-H_1` into unit counts, deepest layer first."""
    try:
        sizes = [int(part) for part in text.strip().split("-")]
    except ValueError as e:
        raise ConfigError(f"Malformed architecture '{text}'") from e
    if not sizes or any(size < 1 for size in sizes):
        raise ConfigError(f"Architecture '{text}' needs positive layer sizes")
    return sizes


def parse_flat(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse a flat `key = value` document."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"Override '{pair}' is not key=value")
        key, value = (part.strip() for part in pair.split("=", 1))
        overrides[key] = value
    return overrides


def build_config(
    schema: Type[ConfigT],
    values: Dict[str, str],
    overrides: Optional[Dict[str, str]] = None,
) -> ConfigT:
    merged = {**values, **(overrides or {})}
    try:
        return schema.model_validate(merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid {schema.__name__}: {problems}") from e


def load_config(
    schema: Type[ConfigT],
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, str]] = None,
) -> ConfigT:
    """Load a strict config from a flat file (or defaults when path is None)."""
    values: Dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        values = parse_flat(text, source=str(path))
    return build_config(schema, values, overrides)


def dump_config(config: _StrictConfig) -> str:
    """Resolved flat document with every default materialized."""
    lines = [f"# resolved {type(config).__name__}"]
    for key, value in config.model_dump().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
