import logging
from pathlib import Path
from typing import Iterable, Literal

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from dic.config.model_config import PRESETS, ModelConfig, preset
from dic.errors import ConfigError
from dic.utils import kv

logger = logging.getLogger(__name__)


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta_start: float = 1e-4
    beta_end: float = 0.02


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    iterations: int = 500
    ema: bool = False
    ema_decay: float = 0.9999


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    noise_std: float = 0.1
    prefetch: int = 4


class CheckpointConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    path: str = "runs/dic.ckpt"
    every: int = 100
    metrics_path: str = "runs/metrics.csv"


class RunConfig(BaseModel):
    """Everything one training run depends on."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = ModelConfig.model_validate(PRESETS["DiC-micro"])
    schedule: ScheduleConfig = ScheduleConfig()
    optim: OptimConfig = OptimConfig()
    data: DataConfig = DataConfig()
    checkpoint: CheckpointConfig = CheckpointConfig()
    seed: int = 0
    dtype: Literal["float32", "float64"] = "float32"
    eval_every: int = 100

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not 0.0 < self.schedule.beta_start < self.schedule.beta_end < 1.0:
            raise ConfigError("need 0 < beta_start < beta_end < 1", field="schedule.beta_start")
        if self.optim.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="optim.batch_size")
        if self.optim.iterations < 0:
            raise ConfigError("iterations must be >= 0", field="optim.iterations")
        if self.optim.lr <= 0:
            raise ConfigError("lr must be positive", field="optim.lr")
        if self.checkpoint.every < 1:
            raise ConfigError("checkpoint.every must be >= 1", field="checkpoint.every")
        return self

    def serialize(self) -> str:
        return kv.render(kv.flatten(self))

    def replace(self, **sections) -> "RunConfig":
        return RunConfig.model_validate({**self.model_dump(), **sections})


def _expand_presets(pairs: list[tuple[str, str]]) -> list[tuple[str, str]]:
    out = []
    for key, value in pairs:
        if key == "model.preset":
            if value not in PRESETS:
                raise ConfigError(f"unknown preset {value}", field=key, code="unknown_value")
            # A preset resets every model field, not only the ones it names.
            out.extend(kv.flatten(preset(value), prefix="model."))
        else:
            out.append((key, value))
    return out


def _check_keys(tree: dict, model_cls: type[BaseModel], prefix: str = "") -> None:
    for key, value in tree.items():
        field = model_cls.model_fields.get(key)
        if field is None:
            raise ConfigError(f"unknown key {prefix}{key}", field=f"{prefix}{key}", code="unknown_key")
        if isinstance(value, dict):
            sub = field.annotation
            if not (isinstance(sub, type) and issubclass(sub, BaseModel)):
                raise ConfigError(f"key {prefix}{key} takes a scalar", field=f"{prefix}{key}", code="unknown_key")
            _check_keys(value, sub, prefix=f"{prefix}{key}.")


def from_pairs(pairs: Iterable[tuple[str, str]], base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from dotted pairs applied on top of `base` (defaults if None)."""
    pairs = _expand_presets(list(pairs))
    start = kv.flatten(base if base is not None else RunConfig())
    tree = kv.nest(start + pairs)
    _check_keys(tree, RunConfig)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{first['msg']}", field=field) from e


def parse(text: str, source: str = "<text>") -> RunConfig:
    return from_pairs(kv.parse_lines(text, source))


def load(path: str | Path, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a config file and apply `key=value` override strings."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", field="--config", path=str(path)) from e
    pairs = kv.parse_lines(text, str(path)) + parse_overrides(overrides)
    logger.info(f"Loaded run config from {path} with {len(pairs)} keys")
    return from_pairs(pairs)


def parse_overrides(overrides: Iterable[str]) -> list[tuple[str, str]]:
    return kv.parse_lines("\n".join(overrides), "--set")


def from_cli(config: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    """`--config FILE` (optional) followed by `--set key=value` overrides."""
    if config is not None:
        return load(config, overrides)
    return from_pairs(parse_overrides(overrides))
