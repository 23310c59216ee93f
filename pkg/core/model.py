"""At-LSTM assembly: title encoder, news-level aggregation, day-level window
encoder and prediction head, plus the ablation variants.

Variant wiring:
  AtLstm     word Bi-LSTM + word/news/day attention, [word ; char] inputs
  BagAtLstm  averaged token embeddings linearly projected to 2u (no word Bi-LSTM)
  WebAtLstm  word embeddings only (no character composition)
  CnnLstm    news-level attention replaced by convolution + max-pool over titles
  TechAtLstm seven standardised technical indicators appended to V
  AbAtLstm   AtLstm wiring; the corpus feeds abstracts instead of headlines
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from config import LOG_LEVEL
from core.errors import ConfigError, ShapeError, WidthError
from core.indicators import INDICATOR_NAMES, IndicatorScaler
from core.layers import (
    CHARSET_SIZE,
    AttentionParams,
    CharCnnParams,
    EmbeddingTable,
    LstmParams,
    ParamStore,
    attention_over_attention,
    bilstm_encode,
    dense_softmax,
    embed_tokens,
    multi_hop_attention,
)
from core.schemas import Hyper, Title, WindowSample
from core.tensor import Tensor, concat, constant, conv1d_valid, matmul, max_pool_time, stack, tanh

logger = logging.getLogger("atlstm.model")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))


class VariantTag(str, Enum):
    AT_LSTM = "AtLstm"
    BAG_AT_LSTM = "BagAtLstm"
    WEB_AT_LSTM = "WebAtLstm"
    CNN_LSTM = "CnnLstm"
    TECH_AT_LSTM = "TechAtLstm"
    AB_AT_LSTM = "AbAtLstm"

    @classmethod
    def parse(cls, name: str | VariantTag) -> VariantTag:
        if isinstance(name, VariantTag):
            return name
        for tag in cls:
            if tag.value.lower() == str(name).strip().lower().replace("-", ""):
                return tag
        raise ConfigError(f"unknown variant {name!r}; expected one of {[t.value for t in cls]}")


@dataclass
class Prediction:
    """Head output for one window plus the annotation matrices of every level."""

    probs: Tensor
    attention: dict[str, Any] = field(default_factory=dict)

    @property
    def p_up(self) -> float:
        return float(self.probs.data[0])

    @property
    def p_down(self) -> float:
        return float(self.probs.data[1])

    @property
    def predicted(self) -> int:
        """0 for up, 1 for down; an exact tie counts as down."""
        return 0 if self.p_up > self.p_down else 1

    def attention_lists(self) -> dict[str, Any]:
        def _conv(value):
            if value is None:
                return None
            if isinstance(value, np.ndarray):
                return value.tolist()
            return [_conv(v) for v in value]

        return {level: _conv(value) for level, value in self.attention.items()}


class AtLstmModel:
    """Parameters and forward pass of one At-LSTM variant."""

    def __init__(
        self,
        variant: VariantTag,
        hyper: Hyper,
        vocab_size: int,
        charset_size: int = CHARSET_SIZE,
        seed: int = 0,
    ):
        if vocab_size < 2:
            raise ShapeError(f"vocabulary must hold at least the pad and unk tokens, got {vocab_size}")
        self.variant = variant
        self.hyper = hyper
        self.vocab_size = vocab_size
        self.charset_size = charset_size
        self.seed = seed
        self.params = ParamStore(seed=seed, init_std=hyper.init_std)

        store = self.params
        u2, v2 = 2 * hyper.news_hidden, 2 * hyper.day_hidden

        self.embedding = EmbeddingTable.create(store, "embedding", vocab_size, hyper.word_dim, std=hyper.embedding_std)
        self.char_cnn: CharCnnParams | None = None
        if variant is not VariantTag.WEB_AT_LSTM:
            self.char_cnn = CharCnnParams.create(
                store, "char_cnn", charset_size, hyper.char_dim, hyper.filter_widths, hyper.maps_per_filter,
                table_std=hyper.embedding_std,
            )
        self.token_width = hyper.word_dim + (self.char_cnn.out_dim if self.char_cnn else 0)

        self.word_fwd = self.word_bwd = None
        self.word_attention: AttentionParams | None = None
        self.bag_w = self.bag_b = None
        if variant is VariantTag.BAG_AT_LSTM:
            self.bag_w = store.xavier("bag.w", (u2, self.token_width))
            self.bag_b = store.zeros("bag.b", (u2,))
        else:
            self.word_fwd = LstmParams.create(store, "word_lstm.fwd", self.token_width, hyper.news_hidden)
            self.word_bwd = LstmParams.create(store, "word_lstm.bwd", self.token_width, hyper.news_hidden)
            self.word_attention = AttentionParams.create(store, "word_attention", u2, hyper.attention_dim, hyper.hops)

        self.news_attention: AttentionParams | None = None
        self.news_filters: tuple[Tensor, ...] = ()
        self.news_biases: tuple[Tensor, ...] = ()
        self.news_proj_w = self.news_proj_b = None
        if variant is VariantTag.CNN_LSTM:
            self.news_filters = tuple(
                store.xavier(f"news_cnn.filter_w{w}", (w, u2, hyper.cnn_maps)) for w in hyper.filter_widths
            )
            self.news_biases = tuple(store.zeros(f"news_cnn.bias_w{w}", (hyper.cnn_maps,)) for w in hyper.filter_widths)
            pooled = len(hyper.filter_widths) * hyper.cnn_maps
            self.news_proj_w = store.xavier("news_cnn.proj_w", (u2, pooled))
            self.news_proj_b = store.zeros("news_cnn.proj_b", (u2,))
        else:
            self.news_attention = AttentionParams.create(store, "news_attention", u2, hyper.attention_dim, hyper.hops)

        self.no_news = store.gaussian("no_news", (u2,))
        self.day_fwd = LstmParams.create(store, "day_lstm.fwd", u2, hyper.day_hidden)
        self.day_bwd = LstmParams.create(store, "day_lstm.bwd", u2, hyper.day_hidden)
        self.day_attention = AttentionParams.create(store, "day_attention", v2, hyper.attention_dim, hyper.hops)

        self.indicator_scaler: IndicatorScaler | None = None
        head_in = v2
        if variant is VariantTag.TECH_AT_LSTM:
            self.indicator_scaler = IndicatorScaler.identity()
            head_in += len(INDICATOR_NAMES)
        self.head_w = store.gaussian("head.w", (2, head_in))
        self.head_b = store.zeros("head.b", (2,))

        self._check_widths()

    # ------------------------------------------------------------------
    # Build-time checks
    # ------------------------------------------------------------------

    def _check_widths(self) -> None:
        h = self.hyper
        u2, v2 = 2 * h.news_hidden, 2 * h.day_hidden
        if h.day_attention_over == "D" and u2 != v2:
            raise WidthError(
                f"day attention over D needs u == v (day vectors are {u2} wide, day encoder {v2})"
            )
        junctions: list[tuple[str, int, int]] = []
        if self.word_fwd is not None:
            junctions += [
                ("token -> word Bi-LSTM", self.token_width, self.word_fwd.input_size),
                ("word Bi-LSTM -> word attention", 2 * self.word_fwd.hidden, self.word_attention.d_in),
                ("word attention -> title vector", self.word_attention.d_out, u2),
            ]
        else:
            junctions.append(("token -> bag projection", self.token_width, self.bag_w.shape[1]))
        if self.news_attention is not None:
            junctions.append(("title vector -> news attention", u2, self.news_attention.d_in))
        else:
            junctions.append(("title vector -> news CNN", u2, self.news_filters[0].shape[1]))
        junctions += [
            ("day vector -> day Bi-LSTM", u2, self.day_fwd.input_size),
            ("day Bi-LSTM -> day attention", 2 * self.day_fwd.hidden, self.day_attention.d_in),
            ("V -> head", self.day_attention.d_out + (len(INDICATOR_NAMES) if self.indicator_scaler else 0),
             self.head_w.shape[1]),
        ]
        for name, produced, consumed in junctions:
            if produced != consumed:
                raise WidthError(f"{name}: produces {produced}, consumer expects {consumed}")

    def num_parameters(self) -> int:
        return self.params.num_parameters()

    def load_embeddings(self, table: np.ndarray) -> None:
        """Seed the word table from pre-trained vectors."""
        weight = self.embedding.weight
        if table.shape != weight.shape:
            raise WidthError(f"pre-trained embeddings {table.shape} do not match table {weight.shape}")
        weight.data[...] = table

    # ------------------------------------------------------------------
    # Encoders
    # ------------------------------------------------------------------

    def encode_title(self, title: Title, cache: dict | None = None) -> tuple[Tensor, Tensor | None]:
        """Title vector N_i (width 2u) and its word-level annotation matrix."""
        if not title.ids:
            raise ShapeError("cannot encode an empty title")
        tokens = embed_tokens(title.ids, title.chars, self.embedding, self.char_cnn, cache)
        if self.variant is VariantTag.BAG_AT_LSTM:
            k = len(title.ids)
            averaged = matmul(constant(np.full(k, 1.0 / k)), tokens)
            return matmul(self.bag_w, averaged) + self.bag_b, None
        H = bilstm_encode(self.word_fwd, self.word_bwd, tokens)
        M, A = multi_hop_attention(self.word_attention, H)
        return attention_over_attention(self.word_attention, M), A

    def encode_day(
        self, titles: Sequence[Title | Tensor], cache: dict | None = None,
    ) -> tuple[Tensor, Tensor | None, list[Tensor | None]]:
        """Day vector D_t from the day's titles (raw titles or their encodings)."""
        if not titles:
            raise ShapeError("encode_day needs at least one title; empty days use the no-news vector")
        vectors: list[Tensor] = []
        word_attention: list[Tensor | None] = []
        for title in titles:
            if isinstance(title, Tensor):
                vectors.append(title)
                word_attention.append(None)
            else:
                vec, A = self.encode_title(title, cache)
                vectors.append(vec)
                word_attention.append(A)
        N = stack(vectors)
        if self.variant is VariantTag.CNN_LSTM:
            return self._conv_news(N), None, word_attention
        M, A = multi_hop_attention(self.news_attention, N)
        return attention_over_attention(self.news_attention, M), A, word_attention

    def _conv_news(self, N: Tensor) -> Tensor:
        widest = max(f.shape[0] for f in self.news_filters)
        if N.shape[0] < widest:
            N = concat([N, constant(np.zeros((widest - N.shape[0], N.shape[1])))])
        pooled = [max_pool_time(conv1d_valid(N, f, b)) for f, b in zip(self.news_filters, self.news_biases)]
        return tanh(matmul(self.news_proj_w, concat(pooled)) + self.news_proj_b)

    def encode_window(self, days: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
        """Window vector V from exactly N day vectors, oldest first."""
        if len(days) != self.hyper.window:
            raise ShapeError(f"window needs {self.hyper.window} day vectors, got {len(days)}")
        H = bilstm_encode(self.day_fwd, self.day_bwd, days)
        M, A = multi_hop_attention(self.day_attention, H)
        if self.hyper.day_attention_over == "D":
            M = matmul(A, stack(list(days)))
        return attention_over_attention(self.day_attention, M), A

    # ------------------------------------------------------------------
    # Prediction
    # ------------------------------------------------------------------

    def forward(self, sample: WindowSample) -> Prediction:
        if len(sample.days) != self.hyper.window:
            raise ShapeError(
                f"malformed window for {sample.target_date}: {len(sample.days)} day slots, "
                f"model expects {self.hyper.window}"
            )
        cache: dict = {}
        day_vectors: list[Tensor] = []
        news_attention: list[np.ndarray | None] = []
        word_attention: list[list[np.ndarray | None]] = []
        for titles in sample.days:
            if not titles:
                day_vectors.append(self.no_news)
                news_attention.append(None)
                word_attention.append([])
                continue
            D, A_news, A_words = self.encode_day(titles, cache)
            day_vectors.append(D)
            news_attention.append(A_news.data if A_news is not None else None)
            word_attention.append([A.data if A is not None else None for A in A_words])

        V, A_day = self.encode_window(day_vectors)
        if self.indicator_scaler is not None:
            if sample.indicators is None:
                raise ShapeError(f"{self.variant.value} needs technical indicators for {sample.target_date}")
            V = concat([V, constant(self.indicator_scaler.transform(sample.indicators))])
        probs = dense_softmax(self.head_w, self.head_b, V)
        return Prediction(probs, {"word": word_attention, "news": news_attention, "day": A_day.data})

    def predict(self, sample: WindowSample) -> Prediction:
        """Forward pass; records nothing unless a tape is open."""
        return self.forward(sample)


def build_variant(
    tag: VariantTag | str,
    hyper: Hyper,
    vocab,
    *,
    charset_size: int = CHARSET_SIZE,
    seed: int = 0,
) -> AtLstmModel:
    """Model wired for ``tag``; ``vocab`` is a Vocab or its size."""
    tag = VariantTag.parse(tag)
    vocab_size = vocab if isinstance(vocab, int) else len(vocab)
    model = AtLstmModel(tag, hyper, vocab_size, charset_size=charset_size, seed=seed)
    logger.info("[MODEL] variant=%s vocab=%d parameters=%d", tag.value, vocab_size, model.num_parameters())
    return model
