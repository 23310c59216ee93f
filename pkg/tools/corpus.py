"""Corpus pipeline: news + prices in, labelled N-day window samples out.

Pipeline:
  load_news      → JSON Lines headlines, tokenised, shifted to their trading day
  load_prices    → CSV closes, sorted and validated
  build_vocab    → Vocab (pad, unk, firm names, frequent tokens)
  make_labels    → up/down label per next trading day
  build_windows  → WindowSample per labelled day with news in its window
  split_by_date  → chronological train/dev/test partition
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import unicodedata
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd
from pydantic import ValidationError

from config import (
    INDEX_SYMBOL,
    LOG_LEVEL,
    MARKET_CLOSE_HOUR,
    MARKET_TIMEZONE,
    MIN_COUNT,
)
from core.errors import DataError
from core.indicators import MIN_HISTORY, raw_indicators
from core.layers import CHARSET, UNK_CHAR
from core.schemas import DOWN, UP, Hyper, Label, NewsItem, PriceBar, Title, WindowSample

logger = logging.getLogger("atlstm.corpus")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

_CHAR_IDS = {ch: i + 2 for i, ch in enumerate(CHARSET)}


# ---------------------------------------------------------------------------
# Tokenisation
# ---------------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Lowercase, drop Unicode punctuation, split on whitespace."""
    cleaned = "".join(ch for ch in text.lower() if not unicodedata.category(ch).startswith("P"))
    return cleaned.split()


def char_ids(word: str) -> list[int]:
    return [_CHAR_IDS.get(ch, UNK_CHAR) for ch in word]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    """Token ↔ id bijection with reserved pad / unk ids and registered firm names."""

    PAD = "<pad>"
    UNK = "<unk>"
    _FIRM_FLAG = "firm"

    def __init__(self, tokens: Iterable[str], firm_names: Iterable[str] = ()):
        self.id_to_token: list[str] = [self.PAD, self.UNK]
        self.token_to_id: dict[str, int] = {self.PAD: 0, self.UNK: 1}
        for token in tokens:
            if token not in self.token_to_id:
                self.token_to_id[token] = len(self.id_to_token)
                self.id_to_token.append(token)
        self.firm_names = frozenset(firm_names)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, word: str) -> int:
        return self.token_to_id.get(word, self.unk_id)

    def encode_words(self, words: Sequence[str]) -> list[int]:
        return [self.encode(w) for w in words]

    def attach(self, items: Sequence[NewsItem]) -> list[NewsItem]:
        """Copies of ``items`` with token ids and per-token char ids filled in."""
        return [
            item.model_copy(update={
                "tokens": self.encode_words(item.words),
                "char_ids": [char_ids(w) for w in item.words],
            })
            for item in items
        ]

    def digest(self) -> str:
        """sha256 of the token list; ties prepped datasets to checkpoints."""
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def dump(self) -> str:
        """One token per line, line number = id; firm-name tokens carry a tab-separated ``firm`` flag."""
        return "".join(
            f"{token}\t{self._FIRM_FLAG}\n" if token in self.firm_names else f"{token}\n"
            for token in self.id_to_token
        )

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        tokens: list[str] = []
        firms: list[str] = []
        for lineno, line in enumerate(lines, 1):
            token, _, flag = line.partition("\t")
            if flag not in ("", cls._FIRM_FLAG):
                raise DataError(f"unknown vocabulary flag {flag!r}", path=str(path), line=lineno)
            tokens.append(token)
            if flag:
                firms.append(token)
        if tokens[:2] != [cls.PAD, cls.UNK]:
            raise DataError("vocabulary must start with the pad and unk tokens", path=str(path))
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens", path=str(path))
        return cls(tokens[2:], firm_names=firms)


def build_vocab(items: Sequence[NewsItem], min_count: int = MIN_COUNT, firm_names: Iterable[str] = ()) -> Vocab:
    """Tokens seen at least ``min_count`` times, plus firm names, get ids."""
    if not items:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for item in items for w in item.words)
    firms = sorted({f for name in firm_names for f in tokenize(name)})
    frequent = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    vocab = Vocab(firms + frequent, firm_names=firms)
    logger.info("[PREP] vocab=%d (min_count=%d, firm names=%d, corpus types=%d)",
                len(vocab), min_count, len(firms), len(counts))
    return vocab


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------


def _market_time(timestamp: dt.datetime) -> pd.Timestamp:
    """``timestamp`` on the market clock; naive values are read as market wall time.

    Wall times repeated when clocks go back read as daylight time; wall times
    skipped when clocks go forward move to the first valid instant.
    """
    ts = pd.Timestamp(timestamp)
    if ts.tzinfo is None:
        return ts.tz_localize(MARKET_TIMEZONE, ambiguous=True, nonexistent="shift_forward")
    return ts.tz_convert(MARKET_TIMEZONE)


def _trading_day(date: dt.date, timestamp: dt.datetime | None) -> dt.date:
    """Calendar day a headline counts for; after the close it rolls forward."""
    if timestamp is None:
        return date
    ts = _market_time(timestamp)
    day = ts.date()
    if ts.hour >= MARKET_CLOSE_HOUR:
        day += dt.timedelta(days=1)
    return day


def load_news(path: str | Path, text_field: str = "headline") -> list[NewsItem]:
    """Parse a JSON Lines news file.

    Each line needs ``date``, ``symbol`` and ``headline``; ``timestamp`` and
    ``abstract`` are optional and other keys are ignored. Items whose text is
    empty after cleaning are dropped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("news file not found", path=str(path))
    items: list[NewsItem] = []
    dropped = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
                if not isinstance(record, dict):
                    raise ValueError("line is not a JSON object")
                missing = [k for k in ("date", "symbol", "headline") if k not in record]
                if missing:
                    raise ValueError(f"missing keys {missing}")
                date = dt.date.fromisoformat(str(record["date"]))
                timestamp = (
                    dt.datetime.fromisoformat(str(record["timestamp"])) if record.get("timestamp") else None
                )
            except ValueError as exc:
                raise DataError(f"malformed news record: {exc}", path=str(path), line=lineno) from exc
            text = record.get(text_field) or ""
            words = tokenize(str(text))
            if not words:
                dropped += 1
                continue
            try:
                items.append(NewsItem(
                    date=date,
                    day=_trading_day(date, timestamp),
                    symbol=str(record["symbol"]),
                    headline=str(record["headline"]),
                    timestamp=timestamp,
                    abstract=record.get("abstract"),
                    words=words,
                    line=lineno,
                ))
            except ValidationError as exc:
                raise DataError(f"invalid news record: {exc.errors()[0]['msg']}", path=str(path), line=lineno) from exc
    if dropped:
        logger.warning("[PREP] dropped %d news items with empty %s after cleaning", dropped, text_field)
    logger.info("[PREP] loaded %d news items from %s", len(items), path.name)
    return items


def load_prices(path: str | Path, symbol: str = INDEX_SYMBOL) -> list[PriceBar]:
    """Read a ``date,close`` CSV into bars sorted by date."""
    path = Path(path)
    if not path.exists():
        raise DataError("price file not found", path=str(path))
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"unreadable price CSV: {exc}", path=str(path)) from exc
    df.columns = [c.strip().lower() for c in df.columns]
    if not {"date", "close"} <= set(df.columns):
        raise DataError(f"price CSV needs a date,close header, got {list(df.columns)}", path=str(path))

    bars: dict[dt.date, PriceBar] = {}
    for offset, (raw_date, raw_close) in enumerate(zip(df["date"], df["close"])):
        lineno = offset + 2
        try:
            date = dt.date.fromisoformat(raw_date.strip())
            close = float(raw_close)
        except ValueError as exc:
            raise DataError(f"unparsable price row {raw_date!r},{raw_close!r}", path=str(path), line=lineno) from exc
        if not close > 0:
            raise DataError(f"non-positive close {close} on {date}", path=str(path), line=lineno)
        if date in bars:
            raise DataError(f"duplicate date {date.isoformat()}", path=str(path), line=lineno)
        bars[date] = PriceBar(date=date, close=close)
    ordered = [bars[d] for d in sorted(bars)]
    logger.info("[PREP] loaded %d price bars for %s", len(ordered), symbol)
    return ordered


# ---------------------------------------------------------------------------
# Labels, windows, splits
# ---------------------------------------------------------------------------


def make_labels(bars: Sequence[PriceBar]) -> dict[dt.date, Label]:
    """Label each next trading day: up when its close is strictly higher, else down."""
    if len(bars) < 2:
        raise DataError(f"labels need at least 2 price bars, got {len(bars)}")
    labels: dict[dt.date, Label] = {}
    for prev, cur in zip(bars, bars[1:]):
        if cur.date <= prev.date:
            raise DataError(f"price bars out of order at {cur.date}")
        labels[cur.date] = Label(anchor=prev.date, target=cur.date, onehot=UP if cur.close > prev.close else DOWN)
    return labels


def _titles_by_day(news: Sequence[NewsItem], hyper: Hyper) -> dict[dt.date, list[Title]]:
    grouped: dict[dt.date, list[NewsItem]] = {}
    for item in news:
        if not item.tokens:
            raise DataError(f"news item on line {item.line} has no token ids; attach a vocabulary first")
        grouped.setdefault(item.day, []).append(item)
    titles: dict[dt.date, list[Title]] = {}
    for day, items in grouped.items():
        # earliest first; items without a timestamp keep file order after timed ones
        items.sort(key=lambda it: (
            it.timestamp is None, _market_time(it.timestamp).value if it.timestamp else 0, it.line,
        ))
        kept = items[:hyper.max_titles_per_day]
        titles[day] = [
            Title(ids=it.tokens[:hyper.max_tokens_per_title], chars=it.char_ids[:hyper.max_tokens_per_title])
            for it in kept
        ]
    return titles


def build_windows(
    news: Sequence[NewsItem],
    labels: dict[dt.date, Label],
    hyper: Hyper,
    *,
    symbol: str = INDEX_SYMBOL,
    bars: Sequence[PriceBar] | None = None,
    stats: dict | None = None,
) -> list[WindowSample]:
    """One sample per labelled day whose N-day window holds any news.

    The window is the N calendar days ending at the anchor day t. Index
    samples use all news; any other symbol uses only news tagged with it.
    With ``bars`` each sample also carries raw technical indicators when at
    least 14 closes are available up to t.
    """
    if symbol != INDEX_SYMBOL:
        news = [item for item in news if item.symbol == symbol]
    by_day = _titles_by_day(news, hyper)
    closes_until: dict[dt.date, list[float]] = {}
    if bars:
        closes = [b.close for b in bars]
        closes_until = {b.date: closes[:i + 1] for i, b in enumerate(bars)}

    samples: list[WindowSample] = []
    skipped = 0
    for target in sorted(labels):
        label = labels[target]
        day_dates = [label.anchor - dt.timedelta(days=k) for k in range(hyper.window - 1, -1, -1)]
        days = [by_day.get(d, []) for d in day_dates]
        if not any(days):
            skipped += 1
            continue
        indicators = None
        history = closes_until.get(label.anchor)
        if history is not None and len(history) >= MIN_HISTORY:
            indicators = raw_indicators(history).tolist()
        samples.append(WindowSample(
            target_date=target,
            anchor_date=label.anchor,
            symbol=symbol,
            day_dates=day_dates,
            days=days,
            label=label.onehot,
            indicators=indicators,
        ))
    if skipped:
        logger.info("[PREP] skipped %d labelled days with no news in their window", skipped)
    if stats is not None:
        stats["skipped_days"] = skipped
        stats["samples"] = len(samples)
    return samples


def split_by_date(
    samples: Sequence[WindowSample], dev_start: dt.date, test_start: dt.date,
) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    """Chronological partition by target date: [.., dev_start), [dev_start, test_start), [test_start, ..)."""
    if not dev_start < test_start:
        raise DataError(f"dev start {dev_start} must precede test start {test_start}")
    ordered = sorted(samples, key=lambda s: (s.target_date, s.symbol))
    train = [s for s in ordered if s.target_date < dev_start]
    dev = [s for s in ordered if dev_start <= s.target_date < test_start]
    test = [s for s in ordered if s.target_date >= test_start]
    return train, dev, test


def check_no_lookahead(samples: Iterable[WindowSample]) -> None:
    """Every sample's news must predate its target day."""
    for s in samples:
        latest = s.latest_news_date
        if latest is not None and latest >= s.target_date:
            raise DataError(f"look-ahead: news dated {latest} in window for target {s.target_date}")
