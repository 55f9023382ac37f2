"""Run configuration management.

One JSON key-value file holds every setting; CLI flags override file values.
Environment variables (read from .env) only supply path defaults, never hyperparameters.
"""

import os
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.errors import ConfigError

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

SCRIPT_DIR = Path(__file__).parent.parent.resolve()
DEFAULT_CONFIG_FILE = SCRIPT_DIR / "sfkt_config.json"

HIDDEN_ACTIVATIONS = ("identity", "relu")
DTYPES = ("float64", "float32")

# Path settings that may come from the environment
ENV_PATHS = {
    "data_csv": "SFKT_DATA_CSV",
    "cache_dir": "SFKT_CACHE_DIR",
    "checkpoint_dir": "SFKT_CHECKPOINT_DIR",
    "report_dir": "SFKT_REPORT_DIR",
}


@dataclass
class LossWeights:
    """Weights of the integrated objective and the perturbation rate."""
    lambda_cl: float = 0.5
    lambda_pert: float = 1.0
    tau: float = 1.0
    dropout: float = 0.2

    def validate(self) -> None:
        if self.lambda_cl < 0 or self.lambda_pert < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ConfigError("temperature tau must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout rate must lie in [0, 1)")


@dataclass
class ModelConfig:
    """Embedding widths, auto-projector sizes and architecture switches."""
    d: int = 64
    d_u: int = 64
    d_q: int = 64
    d_c: int = 64
    d_a: int = 64
    buckets: int = 100
    meta_numbers: int = 100
    scale_logits: bool = False
    cosine_similarity: bool = False
    hidden_activation: str = "identity"
    use_auto_projector: bool = True
    use_long_term: bool = True
    dtype: str = "float64"

    def validate(self) -> None:
        for name in ("d", "d_u", "d_q", "d_c", "d_a"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.buckets < 2:
            raise ConfigError("auto-projector needs at least 2 buckets")
        if self.meta_numbers < 1:
            raise ConfigError("auto-projector needs at least 1 meta-number")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the published experimental setup."""
    lr: float = 0.001
    batch_size: int = 24
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    max_len: int = 200
    grad_clip: float = 5.0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.max_len < 1:
            raise ConfigError("max_len (L) must be >= 1")
        self.model.validate()
        self.loss.validate()


@dataclass
class DataConfig:
    """Chronological split proportions."""
    train_frac: float = 0.8
    val_frac_of_train: float = 0.1

    def validate(self) -> None:
        if not 0 < self.train_frac <= 1:
            raise ConfigError("train_frac must lie in (0, 1]")
        if not 0 <= self.val_frac_of_train < 1:
            raise ConfigError("val_frac_of_train must lie in [0, 1)")


@dataclass
class RunConfig:
    """Everything one CLI run needs."""
    data_csv: Optional[str] = None
    cache_dir: str = "cache"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bucket_edges: List[int] = field(default_factory=lambda: [10, 50, 100, 200])
    seeds: List[int] = field(default_factory=list)

    def validate(self) -> None:
        self.data.validate()
        self.train.validate()
        edges = list(self.bucket_edges)
        if not edges or edges != sorted(set(edges)) or edges[0] <= 0:
            raise ConfigError("bucket_edges must be strictly increasing positive integers")

    def to_dict(self) -> dict:
        return asdict(self)

    def data_fingerprint(self) -> dict:
        """Settings that determine the prepared cache contents."""
        return {
            "train_frac": self.data.train_frac,
            "val_frac_of_train": self.data.val_frac_of_train,
            "max_len": self.train.max_len,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        train = dict(data.pop("train", {}) or {})
        model = ModelConfig(**(train.pop("model", {}) or {}))
        loss = LossWeights(**(train.pop("loss", {}) or {}))
        try:
            return cls(
                data=DataConfig(**(data.pop("data", {}) or {})),
                train=TrainConfig(model=model, loss=loss, **train),
                **data,
            )
        except TypeError as e:
            raise ConfigError(f"unknown configuration key: {e}") from e


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Load run configuration from a JSON file (if any) plus environment path defaults."""
    path = Path(path) if path else DEFAULT_CONFIG_FILE
    data: Dict[str, Any] = {}
    if path.exists():
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    config = RunConfig.from_dict(data)

    # Environment only fills paths the file left unset
    for attr, env_name in ENV_PATHS.items():
        if attr not in data and os.getenv(env_name):
            setattr(config, attr, os.getenv(env_name))

    config.validate()
    return config


def save_config(config: RunConfig, path: Path) -> None:
    """Write the configuration in its file form."""
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)


VARIANTS = {
    "full": {},
    "no-ap": {"train.model.use_auto_projector": False},
    "no-lte": {"train.model.use_long_term": False},
    "no-cl": {"train.loss.lambda_cl": 0.0},
    "no-pert": {"train.loss.lambda_pert": 0.0},
}


def apply_variant(config: RunConfig, variant: Optional[str]) -> RunConfig:
    """Switch off one component for an ablation run."""
    if variant is None:
        return config
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return update_config(config, VARIANTS[variant])


def update_config(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides (``train.lr``, ``train.loss.tau``); ``None`` values are ignored."""
    for key, value in overrides.items():
        if value is None:
            continue
        target = config
        parts = key.split(".")
        for part in parts[:-1]:
            target = getattr(target, part)
        if not hasattr(target, parts[-1]):
            raise ConfigError(f"unknown configuration key: {key}")
        setattr(target, parts[-1], value)
    config.validate()
    return config
