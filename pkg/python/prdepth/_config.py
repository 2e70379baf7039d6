from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from prdepth._data import SceneParams
from prdepth._errors import ConfigError
from prdepth._losses import DEFAULT_PLANE_WEIGHT
from prdepth._metrics import InverseUnit
from prdepth._network import OptimizerName, ResidualTarget, ToyPRNetConfig, TrainOptions
from prdepth._planes import PlaneStrategy
from prdepth._volume import DEFAULT_FILTER_EPS, DEFAULT_FILTER_RADIUS

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]

_NETWORK_KEYS = tuple(ToyPRNetConfig.model_fields)
_TRAIN_KEYS = (
    "steps",
    "learning_rate",
    "optimizer",
    "weight_decay",
    "decay_every",
    "decay_factor",
    "log_every",
)


class RunConfig(BaseModel):
    """Every setting a command can take, from a file or from flags."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # planes and network
    num_planes: int = Field(default=8, ge=2)
    base_channels: int = Field(default=16, ge=1)
    encoder_depth: int = Field(default=3, ge=1)
    filter_radius: int = Field(default=DEFAULT_FILTER_RADIUS, ge=1)
    filter_eps: float = Field(default=DEFAULT_FILTER_EPS, gt=0)
    plane_weight: float = Field(default=DEFAULT_PLANE_WEIGHT, ge=0)
    use_filter: bool = True
    use_confidence: bool = True
    strategy: PlaneStrategy = "UR"
    depth_min: float | None = None
    depth_max: float | None = None
    residual_target: ResidualTarget = "reconstruction"
    seed: int = 0

    # training
    steps: int = Field(default=500, ge=0)
    learning_rate: float = Field(default=5e-2, ge=0)
    optimizer: OptimizerName = "sgd"
    weight_decay: float = Field(default=0.0, ge=0)
    decay_every: int = Field(default=0, ge=0)
    decay_factor: float = Field(default=0.2, gt=0, le=1)
    log_every: int = Field(default=50, ge=1)

    # synthetic data
    n_scenes: int = Field(default=1, ge=0)
    height: int = Field(default=64, ge=16)
    width: int = Field(default=64, ge=16)
    n_rects: int = Field(default=4, ge=0)
    scene_depth_min: float = Field(default=1.0, gt=0)
    scene_depth_max: float = Field(default=8.0, gt=0)
    slant: bool = True
    sparse_count: int = Field(default=500, ge=0)

    # evaluation
    inverse_unit: InverseUnit = "m"
    workers: int = Field(default=4, ge=1)

    # paths
    data_dir: Path | None = None
    out: Path | None = None
    checkpoint: Path | None = None
    loss_log: Path | None = None
    depth: Path | None = None
    sparse: Path | None = None
    plane: Path | None = None
    residual: Path | None = None
    planes_file: Path | None = None
    volume: Path | None = None
    guide: Path | None = None
    scene: Path | None = None
    pred_dir: Path | None = None
    report: Path | None = None

    def network_config(self) -> ToyPRNetConfig:
        return ToyPRNetConfig(**{key: getattr(self, key) for key in _NETWORK_KEYS})

    def train_options(self) -> TrainOptions:
        return TrainOptions(**{key: getattr(self, key) for key in _TRAIN_KEYS})

    def scene_params(self) -> SceneParams:
        return SceneParams(
            n_rects=self.n_rects,
            depth_range=(self.scene_depth_min, self.scene_depth_max),
            slant=self.slant,
        )

    def require(self, key: str) -> Any:  # ruff:ignore[any-type]
        value = getattr(self, key)
        if value is None:
            msg = f"missing required setting {key!r} (flag --{key.replace('_', '-')})"
            raise ConfigError(msg)
        return value


def parse_config_text(text: str, *, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            msg = f"{source}:{lineno}: expected key=value, got {raw.strip()!r}"
            raise ConfigError(msg)
        if key in values:
            msg = f"{source}:{lineno}: duplicate key {key!r}"
            raise ConfigError(msg)
        if key not in RunConfig.model_fields:
            msg = f"{source}:{lineno}: unknown key {key!r}"
            raise ConfigError(msg)
        values[key] = value
    return values


def _normalize(value: str) -> str | None:
    # An empty value or "none" clears an optional setting.
    return None if value.lower() in {"", "none"} else value


def load_run_config(
    path: Path | None = None, overrides: Mapping[str, object] | None = None
) -> RunConfig:
    """File values first, then every non-``None`` override on top."""
    merged: dict[str, object] = {}
    if path is not None:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            msg = f"cannot read config file {path}: {exc}"
            raise ConfigError(msg) from exc
        merged.update(
            (k, _normalize(v)) for k, v in parse_config_text(text, source=str(path)).items()
        )
    for key, value in (overrides or {}).items():
        if key not in RunConfig.model_fields:
            msg = f"unknown setting {key!r}"
            raise ConfigError(msg)
        if value is not None:
            merged[key] = value

    try:
        config = RunConfig.model_validate(merged)
        config.network_config()
    except ValidationError as exc:
        msg = f"invalid configuration: {exc}"
        raise ConfigError(msg) from exc
    if config.scene_depth_min >= config.scene_depth_max:
        msg = "scene_depth_min must be below scene_depth_max"
        raise ConfigError(msg)
    logger.info("effective configuration:\n%s", format_run_config(config))
    return config


def format_run_config(config: RunConfig) -> str:
    """Render as ``key=value`` text that :func:`parse_config_text` reads back."""
    fields = config.model_dump(exclude_none=True)
    lines: list[str] = []
    for key, value in fields.items():
        text = str(value).lower() if isinstance(value, bool) else str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines)
