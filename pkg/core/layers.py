"""Neural building blocks: LSTM cell, Bi-LSTM encoder, word + character
embedding, multi-hop self-attention, attention-over-attention and the softmax head.

Parameters live in a ParamStore under dotted names (``word_lstm.fwd.w_f``);
the dataclasses below only group references to them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from config import FORGET_BIAS, INIT_STD, LOG_LEVEL
from core.errors import ShapeError
from core.tensor import (
    Tensor,
    concat,
    constant,
    conv1d_valid,
    gather_rows,
    lstm_cell,
    matmul,
    max_pool_time,
    reshape,
    row,
    softmax_rows,
    stack,
    tanh,
    transpose,
)

logger = logging.getLogger("atlstm.layers")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

PAD_CHAR = 0
UNK_CHAR = 1
CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"
CHARSET_SIZE = len(CHARSET) + 2


# ---------------------------------------------------------------------------
# Parameter store
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors with seeded Gaussian initialisation.

    Creation order is the iteration order, so two stores built the same way
    from the same seed hold bit-identical values.
    """

    def __init__(self, seed: int = 0, init_std: float = INIT_STD):
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self.init_std = init_std

    def _register(self, name: str, data: np.ndarray, trainable: bool) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        tensor = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = tensor
        return tensor

    def gaussian(self, name: str, shape: tuple[int, ...], trainable: bool = True, std: float | None = None) -> Tensor:
        scale = self.init_std if std is None else std
        return self._register(name, self._rng.normal(0.0, scale, size=shape), trainable)

    def xavier(self, name: str, shape: tuple[int, ...], trainable: bool = True) -> Tensor:
        """Gaussian with std sqrt(2 / (fan_in + fan_out)).

        Matrices are out×in; filter banks are width×in×out and count the
        width on both fans.
        """
        if len(shape) == 2:
            fan_out, fan_in = shape
        elif len(shape) == 3:
            fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
        else:
            raise ShapeError(f"xavier init needs a matrix or filter bank, got shape {shape}")
        return self.gaussian(name, shape, trainable, std=float(np.sqrt(2.0 / (fan_in + fan_out))))

    def constant(self, name: str, shape: tuple[int, ...], value: float, trainable: bool = True) -> Tensor:
        return self._register(name, np.full(shape, float(value)), trainable)

    def zeros(self, name: str, shape: tuple[int, ...], trainable: bool = True) -> Tensor:
        return self.constant(name, shape, 0.0, trainable)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self._params.items() if t.requires_grad}

    def num_parameters(self, trainable_only: bool = True) -> int:
        return int(sum(t.size for t in self._params.values() if t.requires_grad or not trainable_only))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Accumulated gradient per trainable parameter (zeros where none flowed)."""
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for n, t in self._params.items() if t.requires_grad
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for name, t in self._params.items():
            if arrays[name].shape != t.shape:
                raise ShapeError(f"{name}: stored shape {arrays[name].shape} != {t.shape}")
            t.data[...] = arrays[name]


# ---------------------------------------------------------------------------
# Parameter groups
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LstmParams:
    w_f: Tensor
    w_i: Tensor
    w_c: Tensor
    w_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_c: Tensor
    b_o: Tensor

    @property
    def hidden(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, input_size: int, hidden: int) -> LstmParams:
        shape = (hidden, hidden + input_size)
        weights = {g: store.xavier(f"{prefix}.w_{g}", shape) for g in ("f", "i", "c", "o")}
        # forget gate starts open
        biases = {
            g: store.constant(f"{prefix}.b_{g}", (hidden,), FORGET_BIAS if g == "f" else 0.0)
            for g in ("f", "i", "c", "o")
        }
        return cls(
            weights["f"], weights["i"], weights["c"], weights["o"],
            biases["f"], biases["i"], biases["c"], biases["o"],
        )


@dataclass(frozen=True)
class AttentionParams:
    """Scoring matrix, hop matrix and the length-r hop reducer of one attention level."""

    w_a: Tensor        # d_a × d_in
    w_hop: Tensor      # r × d_a
    w_reduce: Tensor   # r
    b_reduce: Tensor   # d_out

    @property
    def hops(self) -> int:
        return self.w_hop.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_a.shape[1]

    @property
    def d_out(self) -> int:
        return self.b_reduce.shape[0]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_in: int, d_a: int, hops: int) -> AttentionParams:
        return cls(
            store.xavier(f"{prefix}.w_a", (d_a, d_in)),
            store.xavier(f"{prefix}.w_hop", (hops, d_a)),
            store.constant(f"{prefix}.w_reduce", (hops,), 1.0 / hops),
            store.zeros(f"{prefix}.b_reduce", (d_in,)),
        )


@dataclass(frozen=True)
class CharCnnParams:
    char_table: Tensor               # |charset| × char_dim
    filters: tuple[Tensor, ...]      # one w × char_dim × maps bank per width
    biases: tuple[Tensor, ...]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.filters)

    @property
    def out_dim(self) -> int:
        return int(sum(f.shape[2] for f in self.filters))

    @classmethod
    def create(
        cls, store: ParamStore, prefix: str, charset_size: int, char_dim: int,
        widths: Sequence[int], maps: int, table_std: float | None = None,
    ) -> CharCnnParams:
        table = store.gaussian(f"{prefix}.char_table", (charset_size, char_dim), std=table_std)
        filters = tuple(store.xavier(f"{prefix}.filter_w{w}", (w, char_dim, maps)) for w in widths)
        biases = tuple(store.zeros(f"{prefix}.bias_w{w}", (maps,)) for w in widths)
        return cls(table, filters, biases)


@dataclass(frozen=True)
class EmbeddingTable:
    weight: Tensor                   # |vocab| × m
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(
        cls, store: ParamStore, name: str, vocab_size: int, dim: int,
        trainable: bool = True, std: float | None = None,
    ) -> EmbeddingTable:
        return cls(store.gaussian(name, (vocab_size, dim), trainable=trainable, std=std), trainable)


# ---------------------------------------------------------------------------
# Recurrent layers
# ---------------------------------------------------------------------------


def lstm_step(p: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step over the concatenated [h_prev; x_t]."""
    if x_t.shape != (p.input_size,) or h_prev.shape != (p.hidden,) or c_prev.shape != (p.hidden,):
        raise ShapeError(
            f"lstm_step expects x {(p.input_size,)}, h/c {(p.hidden,)}; "
            f"got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    state = lstm_cell((p.w_f, p.w_i, p.w_c, p.w_o), (p.b_f, p.b_i, p.b_c, p.b_o), h_prev, x_t, c_prev)
    return row(state, 0), row(state, 1)


def _rows(seq: Sequence[Tensor] | Tensor) -> list[Tensor]:
    if isinstance(seq, Tensor):
        if seq.ndim != 2:
            raise ShapeError(f"sequence matrix must be len×d, got {seq.shape}")
        return [row(seq, i) for i in range(seq.shape[0])]
    return list(seq)


def _run_lstm(p: LstmParams, steps: list[Tensor]) -> list[Tensor]:
    h = constant(np.zeros(p.hidden))
    c = constant(np.zeros(p.hidden))
    outputs = []
    for x_t in steps:
        h, c = lstm_step(p, x_t, h, c)
        outputs.append(h)
    return outputs


def bilstm_encode(fwd: LstmParams, bwd: LstmParams, seq: Sequence[Tensor] | Tensor) -> Tensor:
    """len×2u matrix whose row i is [forward h_i ; backward h_i]."""
    steps = _rows(seq)
    if not steps:
        raise ShapeError("bilstm_encode needs a nonempty sequence")
    if fwd.hidden != bwd.hidden:
        raise ShapeError(f"forward/backward hidden sizes differ: {fwd.hidden} vs {bwd.hidden}")
    forward = _run_lstm(fwd, steps)
    backward = _run_lstm(bwd, steps[::-1])[::-1]
    return stack([concat([hf, hb]) for hf, hb in zip(forward, backward)])


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def pad_chars(char_ids: Sequence[int], min_len: int) -> list[int]:
    """Right-pad a character id list with the pad id up to ``min_len``."""
    ids = list(char_ids)
    return ids + [PAD_CHAR] * max(0, min_len - len(ids))


def char_encode(cnn: CharCnnParams, char_ids: Sequence[int]) -> Tensor:
    """Character composition vector: max-pooled convolutions, one bank per width."""
    if not char_ids:
        raise ShapeError("char_encode needs at least one character id")
    chars = gather_rows(cnn.char_table, pad_chars(char_ids, max(cnn.widths)))
    pooled = [max_pool_time(conv1d_valid(chars, f, b)) for f, b in zip(cnn.filters, cnn.biases)]
    return tanh(concat(pooled))


def embed_tokens(
    word_ids: Sequence[int],
    char_ids: Sequence[Sequence[int]],
    table: EmbeddingTable,
    cnn: CharCnnParams | None,
    cache: dict[tuple[int, ...], Tensor] | None = None,
) -> Tensor:
    """k×(m+n) matrix of [word vector ; char vector] rows; k×m without a char CNN.

    ``cache`` memoises char vectors by character tuple within one graph.
    """
    words = gather_rows(table.weight, word_ids)
    if cnn is None:
        return words
    if len(char_ids) != len(word_ids):
        raise ShapeError(f"{len(word_ids)} word ids but {len(char_ids)} char lists")
    cache = {} if cache is None else cache
    vectors = []
    for chars in char_ids:
        key = tuple(chars)
        if key not in cache:
            cache[key] = char_encode(cnn, chars)
        vectors.append(cache[key])
    return concat([words, stack(vectors)], axis=1)


def embed_word(vocab_id: int, char_ids: Sequence[int], table: EmbeddingTable, cnn: CharCnnParams | None) -> Tensor:
    """e = [w ; c] for a single token."""
    return row(embed_tokens([vocab_id], [char_ids], table, cnn), 0)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def multi_hop_attention(
    p: AttentionParams, H: Tensor, mask: Sequence[bool] | np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """A = softmax_rows(W_hop · tanh(W_a · Hᵀ)) over unmasked positions; M = A·H."""
    if H.ndim != 2 or H.shape[1] != p.d_in:
        raise ShapeError(f"attention expects len×{p.d_in} annotations, got {H.shape}")
    scores = matmul(p.w_hop, tanh(matmul(p.w_a, transpose(H))))
    A = softmax_rows(scores, mask)
    return matmul(A, H), A


def attention_over_attention(p: AttentionParams, M: Tensor) -> Tensor:
    """tanh(W_reduce · M + b): collapse the r hop vectors into one."""
    if M.ndim != 2 or M.shape[0] != p.hops or M.shape[1] != p.d_out:
        raise ShapeError(f"attention-over-attention expects {p.hops}×{p.d_out}, got {M.shape}")
    return tanh(matmul(p.w_reduce, M) + p.b_reduce)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def dense_softmax(W: Tensor, b: Tensor, v: Tensor) -> Tensor:
    """Probability vector softmax(W·v + b)."""
    if W.ndim != 2 or b.shape != (W.shape[0],) or v.shape != (W.shape[1],):
        raise ShapeError(f"dense_softmax shapes: W {W.shape}, b {b.shape}, v {v.shape}")
    logits = reshape(matmul(W, v) + b, (1, W.shape[0]))
    return reshape(softmax_rows(logits), (W.shape[0],))
