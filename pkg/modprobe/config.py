"""Configuration management using pydantic-settings."""

import hashlib
import json
from contextvars import ContextVar
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import ValidationError, field_validator
from pydantic.fields import FieldInfo
from pydantic_settings import (
    BaseSettings,
    NoDecode,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from .cluster import METHODS
from .errors import InvalidArgumentError
from .linalg import BATES_MAX_N
from .stats import METRICS
from .trainer import TrainConfig, parse_architecture, recipe_for

# Fields that never change results and stay out of the config hash
RUNTIME_FIELDS = {"out", "workers", "log_level", "db_path"}

_config_file: ContextVar[Path | None] = ContextVar("modprobe_config_file", default=None)


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment, blank lines are ignored."""
    if not path.exists():
        raise InvalidArgumentError(f"config file {path} does not exist")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidArgumentError(f"{path}:{line_no}: expected key=value")
        values[key.strip().lower()] = value.strip()
    return values


class KeyValueConfigSource(PydanticBaseSettingsSource):
    """Settings source for the --config file, below env vars and above defaults."""

    def __init__(self, settings_cls: type[BaseSettings], path: Path | None):
        super().__init__(settings_cls)
        self.values = parse_config_file(path) if path else {}
        unknown = sorted(set(self.values) - set(settings_cls.model_fields))
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {', '.join(unknown)}")

    def get_field_value(self, field: FieldInfo, field_name: str) -> tuple[Any, str, bool]:
        return self.values.get(field_name), field_name, False

    def __call__(self) -> dict[str, Any]:
        return dict(self.values)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ModprobeSettings(BaseSettings):
    """modprobe configuration: flags > MODPROBE_* env > config file > defaults."""

    model_config = SettingsConfigDict(
        env_prefix="MODPROBE_",
        env_file=".env",
        env_nested_delimiter="__",
        extra="ignore",
    )

    # Data settings
    train_images: Path | None = None
    train_labels: Path | None = None
    test_images: Path | None = None
    test_labels: Path | None = None
    dataset: Literal["mnist", "halves"] = "mnist"
    validation_fraction: float = 0.1
    validation_size: int | None = None

    # Model and training settings
    architecture: str = "mlp-256x4"
    replicates: int = 5
    seed: int = 0
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float = 0.001

    # Clustering settings
    k: int = 16
    k_sweep: Annotated[list[int], NoDecode] = []
    methods: Annotated[list[str], NoDecode] = list(METHODS)

    # Measurement settings
    metrics: Annotated[list[str], NoDecode] = list(METRICS)
    random_count: int = 19

    # Feature visualization settings
    vis_steps: int = 100
    vis_learning_rate: float = 0.05
    vis_jitter: int = 2
    vis_scale_min: float = 0.95
    vis_scale_max: float = 1.05

    # Statistics settings
    alpha: float = 0.05
    bh_scope: Literal["table", "all"] = "table"
    corrvis: bool = False

    # Runtime settings
    workers: int = 1
    out: Path = Path("runs")
    log_level: str = "INFO"
    db_path: str = ":memory:"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            KeyValueConfigSource(settings_cls, _config_file.get()),
            file_secret_settings,
        )

    @field_validator("methods", "metrics", "k_sweep", mode="before")
    @classmethod
    def _comma_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one partitioning method is required")
        unknown = [m for m in value if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        return [m for m in METHODS if m in value]

    @field_validator("metrics")
    @classmethod
    def _known_metrics(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one metric is required")
        unknown = [m for m in value if m not in METRICS]
        if unknown:
            raise ValueError(f"unknown metrics {unknown}; choose from {list(METRICS)}")
        return [m for m in METRICS if m in value]

    @field_validator("architecture")
    @classmethod
    def _known_architecture(cls, value: str) -> str:
        try:
            parse_architecture(value)
        except InvalidArgumentError as e:
            raise ValueError(str(e)) from e
        return value

    @field_validator("replicates", "random_count", "workers")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("replicates")
    @classmethod
    def _aggregatable_replicates(cls, value: int) -> int:
        if value > BATES_MAX_N:
            raise ValueError(f"at most {BATES_MAX_N} replicates can be aggregated")
        return value

    @field_validator("k")
    @classmethod
    def _cluster_count(cls, value: int) -> int:
        if value < 2:
            raise ValueError("k must be at least 2")
        return value

    @field_validator("k_sweep")
    @classmethod
    def _sweep_counts(cls, value: list[int]) -> list[int]:
        if any(k < 2 for k in value):
            raise ValueError("every k in the sweep must be at least 2")
        return value

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        return value

    @field_validator("validation_fraction")
    @classmethod
    def _fraction_range(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        return value

    # ===== derived values =====

    def cluster_counts(self) -> list[int]:
        return list(self.k_sweep) or [self.k]

    def train_config(self, replicate: int) -> TrainConfig:
        epochs, batch_size = recipe_for(self.architecture)
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs if self.epochs is not None else epochs,
            batch_size=self.batch_size if self.batch_size is not None else batch_size,
            seed=self.seed + replicate,
        )

    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over every result-affecting field."""
        payload = self.model_dump(mode="json", exclude=RUNTIME_FIELDS)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def artifact_header(self, seed: int | None = None) -> str:
        return f"config_hash={self.config_hash()} seed={self.seed if seed is None else seed}"


def load_settings(config: Path | None = None, **overrides: Any) -> ModprobeSettings:
    """Build settings from flags (None means unset), env, the config file and defaults."""
    token = _config_file.set(config)
    try:
        return ModprobeSettings(**{k: v for k, v in overrides.items() if v is not None})
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        raise InvalidArgumentError(f"invalid configuration: {problems}") from e
    finally:
        _config_file.reset(token)
