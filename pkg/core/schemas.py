"""Pydantic schemas shared across the pipeline.

Hyper and TrainSettings carry the tunables; NewsItem, PriceBar, Title, Label
and WindowSample are the corpus records that travel through prep files;
EpochRecord and TrainReport are what training writes back out.
"""

from __future__ import annotations

import datetime as dt
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    ACCURACY_WINDOW,
    ADADELTA_EPS,
    ADADELTA_RHO,
    ATTENTION_DIM,
    ATTENTION_HOPS,
    BATCH_SIZE,
    CHAR_DIM,
    CLIP_NORM,
    CNN_NEWS_MAPS,
    DAY_ATTENTION_OVER,
    DAY_HIDDEN,
    EMBEDDING_STD,
    EPOCHS,
    FILTER_WIDTHS,
    INIT_STD,
    LEARNING_RATE,
    MAPS_PER_FILTER,
    MAX_EVAL_WORKERS,
    MAX_TITLES_PER_DAY,
    MAX_TOKENS_PER_TITLE,
    NEWS_HIDDEN,
    WINDOW_DAYS,
    WORD_DIM,
)

UP: tuple[int, int] = (1, 0)
DOWN: tuple[int, int] = (0, 1)


# ---------------------------------------------------------------------------
# Tunables
# ---------------------------------------------------------------------------


class Hyper(BaseModel):
    """Model hyperparameters; defaults are the published At-LSTM values."""

    model_config = ConfigDict(extra="forbid")

    word_dim: int = Field(default=WORD_DIM, gt=0, description="m, word embedding size.")
    char_dim: int = Field(default=CHAR_DIM, gt=0, description="Character embedding size.")
    filter_widths: list[int] = Field(default_factory=lambda: list(FILTER_WIDTHS), min_length=1)
    maps_per_filter: int = Field(default=MAPS_PER_FILTER, gt=0)
    news_hidden: int = Field(default=NEWS_HIDDEN, gt=0, description="u, news-level LSTM units.")
    day_hidden: int = Field(default=DAY_HIDDEN, gt=0, description="v, day-level LSTM units.")
    attention_dim: int = Field(default=ATTENTION_DIM, gt=0, description="d_a.")
    hops: int = Field(default=ATTENTION_HOPS, gt=0, description="r, attention hops.")
    window: int = Field(default=WINDOW_DAYS, gt=0, description="N, delay window in days.")
    lr: float = Field(default=LEARNING_RATE, gt=0)
    epochs: int = Field(default=EPOCHS, ge=0)
    cnn_maps: int = Field(default=CNN_NEWS_MAPS, gt=0, description="CnnLstm maps per width.")
    init_std: float = Field(default=INIT_STD, gt=0, description="Std of the no-news vector and the head weights.")
    embedding_std: float = Field(default=EMBEDDING_STD, gt=0, description="Std of the word and character tables.")
    max_titles_per_day: int = Field(default=MAX_TITLES_PER_DAY, gt=0)
    max_tokens_per_title: int = Field(default=MAX_TOKENS_PER_TITLE, gt=0)
    day_attention_over: Literal["D", "H"] = Field(default=DAY_ATTENTION_OVER)

    @field_validator("filter_widths")
    @classmethod
    def _positive_widths(cls, widths: list[int]) -> list[int]:
        if any(w <= 0 for w in widths):
            raise ValueError(f"filter widths must be positive, got {widths}")
        return widths

    @property
    def char_out(self) -> int:
        """n, width of the character-composition vector."""
        return len(self.filter_widths) * self.maps_per_filter


class TrainSettings(BaseModel):
    """Training-loop knobs that the published setup leaves open."""

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=BATCH_SIZE, gt=0)
    clip_norm: Optional[float] = Field(default=CLIP_NORM, gt=0)
    rho: float = Field(default=ADADELTA_RHO, gt=0, lt=1)
    eps: float = Field(default=ADADELTA_EPS, gt=0)
    accuracy_window: int = Field(default=ACCURACY_WINDOW, gt=0)
    eval_workers: int = Field(default=MAX_EVAL_WORKERS, gt=0)


# ---------------------------------------------------------------------------
# Corpus records
# ---------------------------------------------------------------------------


class NewsItem(BaseModel):
    """One dated headline, tokenised and (after vocab attach) id-encoded."""

    date: dt.date
    day: dt.date = Field(description="Trading-calendar day the item counts for (after close shift).")
    symbol: str
    headline: str
    timestamp: Optional[dt.datetime] = None
    abstract: Optional[str] = None
    words: list[str] = Field(min_length=1)
    tokens: list[int] = Field(default_factory=list)
    char_ids: list[list[int]] = Field(default_factory=list)
    line: int = Field(default=0, description="1-based source line, for stable ordering.")


class PriceBar(BaseModel):
    date: dt.date
    close: float = Field(gt=0)


class Title(BaseModel):
    """Token ids of one title plus the character ids of each token."""

    ids: list[int] = Field(min_length=1)
    chars: list[list[int]] = Field(min_length=1)

    @model_validator(mode="after")
    def _aligned(self) -> Title:
        if len(self.ids) != len(self.chars):
            raise ValueError(f"{len(self.ids)} token ids but {len(self.chars)} char lists")
        if any(not c for c in self.chars):
            raise ValueError("every token needs at least one character id")
        return self


class Label(BaseModel):
    """Direction of close(target) versus close(anchor); anchor is day t, target t+1."""

    anchor: dt.date
    target: dt.date
    onehot: tuple[int, int]

    @property
    def up(self) -> bool:
        return self.onehot == UP


class WindowSample(BaseModel):
    """N-day window of grouped titles ending at the anchor day, labelled for the next trading day."""

    target_date: dt.date
    anchor_date: dt.date
    symbol: str
    day_dates: list[dt.date]
    days: list[list[Title]]
    label: tuple[int, int]
    indicators: Optional[list[float]] = None

    @model_validator(mode="after")
    def _consistent(self) -> WindowSample:
        if len(self.days) != len(self.day_dates):
            raise ValueError(f"{len(self.days)} day slots but {len(self.day_dates)} day dates")
        if self.label not in (UP, DOWN):
            raise ValueError(f"label must be one-hot of length 2, got {self.label}")
        if self.indicators is not None and len(self.indicators) != 7:
            raise ValueError(f"expected 7 technical indicators, got {len(self.indicators)}")
        return self

    @property
    def label_index(self) -> int:
        """0 for up, 1 for down."""
        return 0 if self.label == UP else 1

    @property
    def latest_news_date(self) -> Optional[dt.date]:
        dated = [d for d, titles in zip(self.day_dates, self.days) if titles]
        return max(dated) if dated else None


# ---------------------------------------------------------------------------
# Training output
# ---------------------------------------------------------------------------


class EpochRecord(BaseModel):
    epoch: int = Field(ge=0)
    train_loss: Optional[float] = None
    train_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    dev_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    test_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    aborted: bool = False


class TrainReport(BaseModel):
    """Per-epoch curves plus the average / max accuracy summary."""

    variant: str
    seed: int
    hyper: Hyper
    settings: TrainSettings
    parameter_count: int
    epochs: list[EpochRecord]
    best_epoch: int
    best_dev_accuracy: Optional[float] = None
    accuracy_source: Literal["test", "dev", "train"] = "test"
    average_accuracy: float = Field(ge=0, le=1)
    max_accuracy: float = Field(ge=0, le=1)
    final_train_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    aborted_epochs: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _max_not_below_average(self) -> TrainReport:
        if self.max_accuracy + 1e-12 < self.average_accuracy:
            raise ValueError("max accuracy below average accuracy")
        return self
