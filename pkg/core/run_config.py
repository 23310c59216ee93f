"""RunConfig: everything a CLI command needs, from flags, a config file and the environment.

Precedence, highest first: command-line flags, config file (JSON or YAML),
``ATLSTM_*`` environment variables (nested fields use ``__``, e.g.
``ATLSTM_HYPER__EPOCHS=5``), then the defaults in ``config.py``.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from config import (
    DATA_OUTPUT_DIR,
    DEFAULT_NEWS_PATH,
    DEFAULT_PRICES_PATH,
    DEV_START,
    GRADCHECK_TOL,
    INDEX_SYMBOL,
    MIN_COUNT,
    SEED,
    SKIPGRAM_EPOCHS,
    SKIPGRAM_NEGATIVES,
    SKIPGRAM_WINDOW,
    TEST_START,
)
from core.errors import ConfigError
from core.model import VariantTag
from core.schemas import Hyper, TrainSettings

DEFAULT_ABLATION = [
    VariantTag.AT_LSTM.value,
    VariantTag.BAG_AT_LSTM.value,
    VariantTag.WEB_AT_LSTM.value,
    VariantTag.CNN_LSTM.value,
    VariantTag.TECH_AT_LSTM.value,
]


class RunConfig(BaseSettings):
    """Paths, variant, split boundaries, seed and the tunables of one run."""

    model_config = SettingsConfigDict(
        env_prefix="ATLSTM_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    # -- inputs / outputs ----------------------------------------------------
    news_path: Path = DEFAULT_NEWS_PATH
    prices_path: Path = DEFAULT_PRICES_PATH
    data_dir: Path = Field(default=DATA_OUTPUT_DIR / "dataset", description="Prepped dataset directory.")
    out_dir: Path = DATA_OUTPUT_DIR
    checkpoint: Optional[Path] = Field(default=None, description="Defaults to <out_dir>/model.atls.")
    embeddings: Optional[Path] = Field(default=None, description="Defaults to <data_dir>/embeddings.npy.")

    # -- corpus --------------------------------------------------------------
    symbol: str = INDEX_SYMBOL
    text_field: Literal["headline", "abstract"] = "headline"
    firm_names: list[str] = Field(default_factory=list)
    companies: dict[str, Path] = Field(default_factory=dict, description="symbol -> price CSV for the company sweep.")
    min_count: int = Field(default=MIN_COUNT, ge=1)
    dev_start: dt.date = dt.date.fromisoformat(DEV_START)
    test_start: dt.date = dt.date.fromisoformat(TEST_START)

    # -- model / training ----------------------------------------------------
    variant: str = VariantTag.AT_LSTM.value
    variants: list[str] = Field(default_factory=lambda: list(DEFAULT_ABLATION))
    seed: int = Field(default=SEED, ge=0, lt=2**64)
    hyper: Hyper = Field(default_factory=Hyper)
    train: TrainSettings = Field(default_factory=TrainSettings)

    # -- skip-gram -----------------------------------------------------------
    skipgram_epochs: int = Field(default=SKIPGRAM_EPOCHS, ge=1)
    skipgram_window: int = Field(default=SKIPGRAM_WINDOW, ge=1)
    skipgram_negatives: int = Field(default=SKIPGRAM_NEGATIVES, ge=1)

    # -- evaluation / reporting ----------------------------------------------
    split: Literal["train", "dev", "test"] = "test"
    dump_attention: bool = False
    plot: bool = True
    gradcheck_tol: float = Field(default=GRADCHECK_TOL, gt=0)
    gradcheck_max_coords: Optional[int] = Field(default=None, gt=0)

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, value: str) -> str:
        return _parse_variant(value)

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, values: list[str]) -> list[str]:
        if not values:
            raise ValueError("variants must name at least one model")
        return [_parse_variant(v) for v in values]

    @model_validator(mode="after")
    def _ordered_splits(self) -> RunConfig:
        if not self.dev_start < self.test_start:
            raise ValueError(f"dev_start {self.dev_start} must precede test_start {self.test_start}")
        return self

    # ------------------------------------------------------------------

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint or self.out_dir / "model.atls"

    @property
    def embeddings_path(self) -> Path:
        return self.embeddings or self.data_dir / "embeddings.npy"

    @property
    def variant_tag(self) -> VariantTag:
        return VariantTag.parse(self.variant)

    def require_files(self, *fields: str) -> None:
        """Raise ConfigError unless every named path field points at an existing file."""
        for name in fields:
            path = getattr(self, name, None)
            if path is None or not Path(path).is_file():
                raise ConfigError(f"{name}: file not found: {path}")

    def require_dataset(self) -> None:
        if not (self.data_dir / "_registry.json").is_file():
            raise ConfigError(f"no prepped dataset in {self.data_dir}; run `prep` first")


def _parse_variant(value: str) -> str:
    try:
        return VariantTag.parse(value).value
    except ConfigError as exc:
        raise ValueError(str(exc)) from exc


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON or YAML mapping (YAML is a JSON superset)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: unreadable config file: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config file must hold a mapping, got {type(raw).__name__}")
    return raw


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_run_config(config_path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """RunConfig from an optional config file plus flag overrides; ConfigError on any invalid value."""
    values = load_config_file(config_path) if config_path else {}
    values = _deep_merge(values, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"invalid configuration at {where}: {first['msg']}") from exc
