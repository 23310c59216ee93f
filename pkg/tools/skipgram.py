"""Skip-gram with negative sampling, trained on the headline corpus.

The trained input vectors seed the model's word table. Rows the corpus
never exercises (pad, unk, firm names absent from the headlines) keep their
Gaussian initialisation.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from config import (
    EMBEDDING_STD,
    LOG_LEVEL,
    SKIPGRAM_EPOCHS,
    SKIPGRAM_LR,
    SKIPGRAM_NEGATIVES,
    SKIPGRAM_WINDOW,
    WORD_DIM,
)
from core.errors import DataError
from core.layers import EmbeddingTable, ParamStore
from core.schemas import NewsItem

logger = logging.getLogger("atlstm.skipgram")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

# ids below this are pad / unk and never act as centre or context words
_FIRST_WORD_ID = 2


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def negative_table(counts: np.ndarray, power: float = 0.75) -> np.ndarray:
    """Cumulative unigram^power distribution for ``searchsorted`` draws."""
    weights = np.power(counts.astype(np.float64), power)
    total = weights.sum()
    if total <= 0:
        raise DataError("negative sampling needs at least one counted word")
    return np.cumsum(weights / total)


def train_skipgram(
    items: Sequence[NewsItem] | Sequence[Sequence[int]],
    vocab_size: int,
    dim: int = WORD_DIM,
    window: int = SKIPGRAM_WINDOW,
    negatives: int = SKIPGRAM_NEGATIVES,
    epochs: int = SKIPGRAM_EPOCHS,
    seed: int = 0,
    lr: float = SKIPGRAM_LR,
    init_std: float = EMBEDDING_STD,
) -> EmbeddingTable:
    """Train SGNS word vectors over token-id sentences.

    ``items`` are vocab-attached news items or plain id lists. The learning
    rate decays linearly to 1e-4 of its start over the run. A fixed seed gives
    a bit-identical table.
    """
    sentences = [
        [t for t in (it.tokens if isinstance(it, NewsItem) else it) if t >= _FIRST_WORD_ID]
        for it in items
    ]
    sentences = [s for s in sentences if len(s) >= 2]
    if not sentences:
        raise DataError("skip-gram needs at least one sentence with two in-vocabulary words")
    if any(t >= vocab_size for s in sentences for t in s):
        raise DataError(f"token id outside vocabulary of size {vocab_size}")

    store = ParamStore(seed=seed, init_std=init_std)
    table = EmbeddingTable.create(store, "embedding", vocab_size, dim)
    rng = np.random.default_rng(seed + 1)

    counts = np.zeros(vocab_size, dtype=np.int64)
    for s in sentences:
        np.add.at(counts, s, 1)
    cdf = negative_table(counts)
    seen = np.flatnonzero(counts)

    w_in = table.weight.data
    w_in[seen] = rng.uniform(-0.5 / dim, 0.5 / dim, size=(seen.size, dim))
    w_out = np.zeros((vocab_size, dim))

    total_steps = epochs * sum(len(s) for s in sentences)
    step = 0
    for epoch in range(epochs):
        loss = 0.0
        pairs = 0
        for si in rng.permutation(len(sentences)):
            sentence = sentences[si]
            for pos, centre in enumerate(sentence):
                alpha = max(lr * (1.0 - step / max(total_steps, 1)), lr * 1e-4)
                step += 1
                lo, hi = max(0, pos - window), min(len(sentence), pos + window + 1)
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    negs = np.searchsorted(cdf, rng.random(negatives), side="right")
                    negs = np.minimum(negs, vocab_size - 1)
                    targets = np.concatenate(([sentence[ctx_pos]], negs))
                    labels = np.zeros(targets.size)
                    labels[0] = 1.0

                    v = w_in[centre]
                    u = w_out[targets]
                    score = _sigmoid(u @ v)
                    g = (labels - score) * alpha
                    loss -= np.log(max(score[0], 1e-12)) + np.log(np.maximum(1.0 - score[1:], 1e-12)).sum()
                    pairs += 1

                    np.add.at(w_out, targets, np.outer(g, v))
                    w_in[centre] = v + g @ u
        logger.info("[SKIPGRAM] epoch %d/%d  pairs=%d  loss=%.4f", epoch + 1, epochs, pairs, loss / max(pairs, 1))

    return table


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of row vectors."""
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms == 0.0, 1.0, norms)
    return unit @ unit.T
