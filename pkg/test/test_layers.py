"""Layer operations against hand evaluations and direct-formula oracles."""

from __future__ import annotations

import numpy as np
import pytest

from core.errors import ShapeError
from core.layers import (
    CHARSET_SIZE,
    AttentionParams,
    CharCnnParams,
    EmbeddingTable,
    LstmParams,
    ParamStore,
    attention_over_attention,
    bilstm_encode,
    char_encode,
    dense_softmax,
    embed_word,
    lstm_step,
    multi_hop_attention,
)
from core.tensor import constant


def _zero_lstm(hidden: int, input_size: int) -> LstmParams:
    store = ParamStore(seed=0)
    p = LstmParams.create(store, "cell", input_size, hidden)
    for t in store.trainable().values():
        t.data[...] = 0.0
    return p


def _np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def test_group_initialisation():
    store = ParamStore(seed=0)
    lstm = LstmParams.create(store, "cell", 40, 60)
    np.testing.assert_array_equal(lstm.b_f.data, np.ones(60))
    np.testing.assert_array_equal(lstm.b_i.data, np.zeros(60))
    assert lstm.w_f.data.std() == pytest.approx(np.sqrt(2.0 / 160), rel=0.1)

    att = AttentionParams.create(store, "att", 8, 6, 4)
    np.testing.assert_array_equal(att.w_reduce.data, np.full(4, 0.25))

    cnn = CharCnnParams.create(store, "cnn", CHARSET_SIZE, 15, [3], 32, table_std=1.0)
    assert cnn.filters[0].data.std() == pytest.approx(np.sqrt(2.0 / (3 * 15 + 3 * 32)), rel=0.1)
    assert cnn.char_table.data.std() == pytest.approx(1.0, rel=0.15)
    with pytest.raises(ShapeError):
        store.xavier("bias", (3,))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def test_lstm_step_zero_weights():
    p = _zero_lstm(3, 2)
    h, c = lstm_step(p, constant(np.ones(2)), constant(np.zeros(3)), constant(np.zeros(3)))
    np.testing.assert_array_equal(h.data, np.zeros(3))
    np.testing.assert_array_equal(c.data, np.zeros(3))


def test_lstm_step_scalar_hand_evaluation():
    p = _zero_lstm(1, 1)
    h, c = lstm_step(p, constant([0.7]), constant([0.0]), constant([2.0]))
    assert c.data[0] == pytest.approx(1.0, abs=1e-12)
    assert h.data[0] == pytest.approx(0.5 * np.tanh(1.0), abs=1e-12)
    assert h.data[0] == pytest.approx(0.380797, abs=1e-6)


def test_lstm_cell_state_non_increasing_without_input_term():
    p = _zero_lstm(2, 2)
    h, c = constant(np.zeros(2)), constant([3.0, -1.5])
    previous = np.abs(c.data)
    for _ in range(5):
        h, c = lstm_step(p, constant(np.zeros(2)), h, c)
        assert np.all(np.abs(c.data) <= previous)
        previous = np.abs(c.data)


def test_lstm_step_shape_check():
    p = _zero_lstm(2, 3)
    with pytest.raises(ShapeError):
        lstm_step(p, constant(np.zeros(2)), constant(np.zeros(2)), constant(np.zeros(2)))


def _unidirectional(p: LstmParams, xs):
    h, c = np.zeros(p.hidden), np.zeros(p.hidden)
    out = []
    for x in xs:
        z = np.concatenate([h, x])
        f = _np_sigmoid(p.w_f.data @ z + p.b_f.data)
        i = _np_sigmoid(p.w_i.data @ z + p.b_i.data)
        g = np.tanh(p.w_c.data @ z + p.b_c.data)
        o = _np_sigmoid(p.w_o.data @ z + p.b_o.data)
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return out


def test_bilstm_equals_two_unidirectional_runs():
    store = ParamStore(seed=4)
    fwd = LstmParams.create(store, "f", 3, 4)
    bwd = LstmParams.create(store, "b", 3, 4)
    xs = list(np.random.default_rng(2).normal(size=(3, 3)))
    H = bilstm_encode(fwd, bwd, [constant(x) for x in xs]).data
    forward = _unidirectional(fwd, xs)
    backward = _unidirectional(bwd, xs[::-1])[::-1]
    expected = np.stack([np.concatenate([a, b]) for a, b in zip(forward, backward)])
    np.testing.assert_allclose(H, expected, atol=1e-12)


def test_bilstm_palindrome_symmetry_and_single_step():
    store = ParamStore(seed=9)
    fwd = LstmParams.create(store, "f", 2, 3)
    bwd = LstmParams(**{k: getattr(fwd, k) for k in ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")})
    a, b = np.array([0.3, -0.2]), np.array([1.0, 0.5])
    H = bilstm_encode(fwd, bwd, constant(np.stack([a, b, a]))).data
    np.testing.assert_allclose(H[0, :3], H[2, 3:], atol=1e-15)
    np.testing.assert_allclose(H[1, :3], H[1, 3:], atol=1e-15)

    single = bilstm_encode(fwd, bwd, [constant(a)]).data
    assert single.shape == (1, 6)
    np.testing.assert_allclose(single[0, :3], single[0, 3:], atol=1e-15)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def test_word_plus_char_width_under_default_sizes():
    store = ParamStore(seed=0)
    table = EmbeddingTable.create(store, "emb", 10, 100)
    cnn = CharCnnParams.create(store, "cnn", CHARSET_SIZE, 15, [1, 3, 5], 32)
    e = embed_word(4, [3, 4, 5, 6], table, cnn)
    assert e.shape == (196,)
    np.testing.assert_array_equal(e.data[:100], table.weight.data[4])


def test_unknown_token_reads_unk_row_and_single_char_word_pads():
    store = ParamStore(seed=1)
    table = EmbeddingTable.create(store, "emb", 10, 6)
    cnn = CharCnnParams.create(store, "cnn", CHARSET_SIZE, 4, [1, 3, 5], 2)
    e = embed_word(1, [7], table, cnn)
    np.testing.assert_array_equal(e.data[:6], table.weight.data[1])
    assert np.all(np.isfinite(e.data)) and e.shape == (12,)
    assert char_encode(cnn, [7]).shape == (6,)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def _attention(seed=0, d_in=3, d_a=4, hops=2) -> AttentionParams:
    return AttentionParams.create(ParamStore(seed=seed), "att", d_in, d_a, hops)


def test_identical_rows_give_uniform_attention():
    p = _attention()
    H = constant(np.tile([0.2, -0.4, 1.0], (4, 1)))
    _, A = multi_hop_attention(p, H)
    np.testing.assert_allclose(A.data, np.full((2, 4), 0.25), atol=1e-15)
    _, A = multi_hop_attention(p, H, mask=[True, False, True, True])
    np.testing.assert_allclose(A.data, [[1 / 3, 0, 1 / 3, 1 / 3]] * 2, atol=1e-15)
    assert np.all(A.data[:, 1] == 0.0)


def test_single_position_attention_is_forced():
    p = _attention()
    H = constant([[0.5, 0.1, -0.3]])
    M, A = multi_hop_attention(p, H)
    np.testing.assert_array_equal(A.data, np.ones((2, 1)))
    np.testing.assert_allclose(M.data, np.tile(H.data, (2, 1)), atol=1e-15)


def test_multi_hop_attention_matches_formula():
    p = _attention(seed=5)
    H = np.random.default_rng(8).normal(size=(3, 3))
    M, A = multi_hop_attention(p, constant(H))
    scores = p.w_hop.data @ np.tanh(p.w_a.data @ H.T)
    expected_A = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(A.data, expected_A, atol=1e-12)
    np.testing.assert_allclose(M.data, expected_A @ H, atol=1e-12)


def test_attended_rows_stay_inside_the_column_ranges():
    p = _attention(seed=7, d_in=5, d_a=6, hops=3)
    H = np.random.default_rng(9).normal(size=(6, 5)) * 4.0
    mask = [True, False, True, True, False, True]
    M, _ = multi_hop_attention(p, constant(H), mask=mask)
    kept = H[np.asarray(mask)]
    assert np.all(M.data >= kept.min(axis=0) - 1e-12)
    assert np.all(M.data <= kept.max(axis=0) + 1e-12)


def test_attention_over_attention_cases():
    p = _attention(seed=6)
    M = np.random.default_rng(1).normal(size=(2, 3))
    p.w_reduce.data[...] = [0.0, 1.0]
    np.testing.assert_allclose(attention_over_attention(p, constant(M)).data, np.tanh(M[1]), atol=1e-15)
    p.w_reduce.data[...] = 0.0
    np.testing.assert_array_equal(attention_over_attention(p, constant(M)).data, np.zeros(3))
    p.w_reduce.data[...] = [0.3, -1.2]
    p.b_reduce.data[...] = [0.1, 0.0, -0.2]
    expected = np.tanh(p.w_reduce.data @ M + p.b_reduce.data)
    np.testing.assert_allclose(attention_over_attention(p, constant(M)).data, expected, atol=1e-12)


def test_attention_rejects_wrong_width():
    with pytest.raises(ShapeError):
        multi_hop_attention(_attention(d_in=3), constant(np.zeros((2, 4))))


# ---------------------------------------------------------------------------
# Head
# ---------------------------------------------------------------------------


def test_dense_softmax_cases():
    W, b = constant(np.zeros((2, 4))), constant(np.zeros(2))
    np.testing.assert_array_equal(dense_softmax(W, b, constant(np.ones(4))).data, [0.5, 0.5])
    saturated = dense_softmax(W, constant([30.0, -30.0]), constant(np.ones(4))).data
    assert saturated[0] == pytest.approx(1.0, abs=1e-20)
    assert saturated[1] < 1e-20

    rng = np.random.default_rng(0)
    Wr, br, v = rng.normal(size=(2, 4)), rng.normal(size=2), rng.normal(size=4)
    logits = Wr @ v + br
    expected = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(dense_softmax(constant(Wr), constant(br), constant(v)).data, expected, atol=1e-12)
