"""Generated corpora for tests and sanity runs.

  keyword_samples    windows labelled by "surge" / "plunge" headlines
  keyword_files      the same signal written as a news JSONL + price CSV pair
  two_topic_corpus   sentences drawn from two disjoint word clusters
  gradcheck_setup    miniature model and one window for gradient checking
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

import numpy as np

from core.model import AtLstmModel, VariantTag, build_variant
from core.schemas import DOWN, UP, Hyper, Title, WindowSample
from tools.corpus import Vocab, char_ids

UP_WORD = "surge"
DOWN_WORD = "plunge"
FILLER = [
    "shares", "market", "report", "quarter", "analysts", "bank", "oil", "trade",
    "deal", "profit", "sales", "outlook", "rates", "fund", "board", "chief",
    "tech", "energy", "retail", "bond", "yield", "merger", "earnings", "china",
]


def keyword_vocab() -> Vocab:
    return Vocab([UP_WORD, DOWN_WORD] + FILLER)


def _title(words: list[str], vocab: Vocab) -> Title:
    return Title(ids=vocab.encode_words(words), chars=[char_ids(w) for w in words])


def keyword_samples(
    n: int,
    hyper: Hyper,
    seed: int = 0,
    *,
    titles_per_day: tuple[int, int] = (0, 2),
    title_len: tuple[int, int] = (3, 6),
    every_title: bool = False,
    start: dt.date = dt.date(2010, 1, 4),
) -> tuple[list[WindowSample], Vocab]:
    """``n`` windows labelled up / down by a "surge" / "plunge" keyword.

    By default one keyword title is placed on a random day among filler
    titles. With ``every_title`` each drawn title carries the keyword and at
    least one day holds a title. Labels alternate before shuffling so the
    classes stay balanced.
    """
    rng = np.random.default_rng(seed)
    vocab = keyword_vocab()
    samples: list[WindowSample] = []

    def words_with(keyword: str) -> list[str]:
        words = list(rng.choice(FILLER, size=int(rng.integers(title_len[0], title_len[1])))) + [keyword]
        rng.shuffle(words)
        return words

    for i in range(n):
        up = i % 2 == 0
        keyword = UP_WORD if up else DOWN_WORD
        days: list[list[Title]] = []
        for _ in range(hyper.window):
            count = int(rng.integers(titles_per_day[0], titles_per_day[1] + 1))
            if every_title:
                days.append([_title(words_with(keyword), vocab) for _ in range(count)])
            else:
                days.append([
                    _title(list(rng.choice(FILLER, size=int(rng.integers(title_len[0], title_len[1] + 1)))), vocab)
                    for _ in range(count)
                ])
        if not every_title or not any(days):
            day = int(rng.integers(hyper.window))
            days[day].insert(int(rng.integers(len(days[day]) + 1)), _title(words_with(keyword), vocab))

        target = start + dt.timedelta(days=i)
        anchor = target - dt.timedelta(days=1)
        samples.append(WindowSample(
            target_date=target,
            anchor_date=anchor,
            symbol="INDEX",
            day_dates=[anchor - dt.timedelta(days=k) for k in range(hyper.window - 1, -1, -1)],
            days=days,
            label=UP if up else DOWN,
        ))
    order = rng.permutation(n)
    return [samples[i] for i in order], vocab


def keyword_files(out_dir: str | Path, days: int = 40, seed: int = 0, start: dt.date = dt.date(2012, 1, 2)) -> tuple[Path, Path]:
    """Write ``news.jsonl`` and ``prices.csv`` where day t's keyword decides the t+1 move."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    news_lines: list[str] = []
    price_lines = ["date,close"]
    close = 100.0
    for d in range(days):
        date = start + dt.timedelta(days=d)
        price_lines.append(f"{date.isoformat()},{close:.2f}")
        up = bool(rng.integers(2))
        words = list(rng.choice(FILLER, size=3)) + [UP_WORD if up else DOWN_WORD]
        rng.shuffle(words)
        news_lines.append(json.dumps({
            "date": date.isoformat(),
            "timestamp": f"{date.isoformat()}T09:30:00-05:00",
            "symbol": "INDEX",
            "headline": " ".join(words).capitalize() + ".",
        }))
        close = close + 1.0 if up else close - 1.0
    news_path = out_dir / "news.jsonl"
    prices_path = out_dir / "prices.csv"
    news_path.write_text("\n".join(news_lines) + "\n", encoding="utf-8")
    prices_path.write_text("\n".join(price_lines) + "\n", encoding="utf-8")
    return news_path, prices_path


def two_topic_corpus(docs_per_topic: int = 50, words_per_doc: int = 10, seed: int = 0) -> tuple[list[list[str]], list[str], list[str]]:
    """Documents drawn from one of two disjoint word clusters."""
    rng = np.random.default_rng(seed)
    topic_a = [f"alpha{i}" for i in range(8)]
    topic_b = [f"beta{i}" for i in range(8)]
    docs = []
    for words in (topic_a, topic_b):
        for _ in range(docs_per_topic):
            docs.append(list(rng.choice(words, size=words_per_doc)))
    order = rng.permutation(len(docs))
    return [docs[i] for i in order], topic_a, topic_b


GRADCHECK_HYPER = Hyper(
    word_dim=5,
    char_dim=3,
    filter_widths=[1, 3, 5],
    maps_per_filter=2,
    news_hidden=4,
    day_hidden=4,
    attention_dim=6,
    hops=2,
    window=3,
    cnn_maps=3,
    init_std=0.3,
    epochs=1,
)
GRADCHECK_VOCAB = 20


def gradcheck_setup(
    variant: VariantTag | str = VariantTag.AT_LSTM,
    seed: int = 0,
    hyper: Hyper = GRADCHECK_HYPER,
) -> tuple[AtLstmModel, WindowSample]:
    """Miniature model plus one window of 2 titles/day and 5 tokens/title.

    The middle day is left empty so the no-news vector takes part.
    """
    rng = np.random.default_rng(seed + 7)
    model = build_variant(variant, hyper, GRADCHECK_VOCAB, seed=seed)
    days = []
    for d in range(hyper.window):
        titles = []
        for _ in range(0 if d == hyper.window // 2 else 2):
            ids = [int(i) for i in rng.integers(1, GRADCHECK_VOCAB, size=5)]
            chars = [[int(c) for c in rng.integers(1, model.charset_size, size=int(rng.integers(2, 7)))] for _ in ids]
            titles.append(Title(ids=ids, chars=chars))
        days.append(titles)
    anchor = dt.date(2013, 3, 13)
    sample = WindowSample(
        target_date=anchor + dt.timedelta(days=1),
        anchor_date=anchor,
        symbol="INDEX",
        day_dates=[anchor - dt.timedelta(days=k) for k in range(hyper.window - 1, -1, -1)],
        days=days,
        label=UP,
        indicators=[float(v) for v in rng.normal(size=7)] if VariantTag.parse(variant) is VariantTag.TECH_AT_LSTM else None,
    )
    return model, sample
