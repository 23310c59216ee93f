"""Tensor ops, tape semantics and gradient checking."""

from __future__ import annotations

import threading

import numpy as np
import pytest

from core.errors import IndexRangeError, NumericalError, ShapeError, TapeError
from core.tensor import (
    Tape,
    Tensor,
    backward,
    concat,
    constant,
    conv1d_valid,
    elementwise,
    gather_rows,
    grad_check,
    log,
    lstm_cell,
    matmul,
    max_pool_time,
    mean,
    mul,
    sigmoid,
    softmax_rows,
    stack,
    tanh,
    transpose,
)
from core.tensor import sum as tsum


def _param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------


def test_matmul_hand_cases():
    m = constant([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(matmul(constant(np.eye(2)), m).data, m.data)
    np.testing.assert_array_equal(matmul(m, constant(np.zeros((2, 2)))).data, np.zeros((2, 2)))
    out = matmul(constant([[1.0, 2.0], [3.0, 4.0]]), constant([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\) x \(2, 3\)"):
        matmul(constant(np.zeros((2, 3))), constant(np.zeros((2, 3))))


def test_elementwise_values():
    assert sigmoid(constant(0.0)).item() == 0.5
    assert tanh(constant(0.0)).item() == 0.0
    np.testing.assert_array_equal(elementwise("mul", constant([1.0, 2.0]), constant([3.0, 4.0])).data, [3.0, 8.0])
    with pytest.raises(ValueError):
        elementwise("relu", constant([1.0]))


def test_softmax_rows_cases():
    np.testing.assert_allclose(softmax_rows(constant([[0.0, 0.0]])).data, [[0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(softmax_rows(constant([[7.0, 7.0, 7.0]])).data, [[1 / 3] * 3], atol=1e-15)
    x = np.array([1.0, 2.0, 3.0])
    expected = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax_rows(constant([x])).data[0], expected, atol=1e-12)


def test_softmax_masked_columns_get_exact_zero():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        x = rng.normal(scale=3.0, size=(int(rng.integers(1, 4)), n))
        mask = rng.random(n) < 0.6
        if not mask.any():
            mask[int(rng.integers(n))] = True
        y = softmax_rows(constant(x), mask).data
        assert np.all(y[:, ~mask] == 0.0)
        np.testing.assert_allclose(y[:, mask].sum(axis=1), 1.0, atol=1e-9)


def test_softmax_fully_masked_row_is_rejected():
    with pytest.raises(ShapeError):
        softmax_rows(constant([[1.0, 2.0]]), [False, False])


def test_concat_layouts():
    x = constant([1.0, 2.0])
    assert concat([x]) is x
    np.testing.assert_array_equal(concat([constant([1.0]), constant([2.0])]).data, [1.0, 2.0])
    a, b = constant(np.arange(6.0).reshape(2, 3)), constant(np.arange(4.0).reshape(2, 2))
    out = concat([a, b], axis=1).data
    np.testing.assert_array_equal(out[:, :3], a.data)
    np.testing.assert_array_equal(out[:, 3:], b.data)


def _conv_oracle(seq, filters, bias):
    k, d_in = seq.shape
    w, _, d_out = filters.shape
    out = np.zeros((k - w + 1, d_out))
    for t in range(k - w + 1):
        for o in range(d_out):
            acc = bias[o]
            for j in range(w):
                for c in range(d_in):
                    acc += seq[t + j, c] * filters[j, c, o]
            out[t, o] = acc
    return out


def test_conv1d_identity_and_zero_filters():
    seq = np.random.default_rng(0).normal(size=(5, 3))
    identity = np.eye(3).reshape(1, 3, 3)
    np.testing.assert_array_equal(conv1d_valid(constant(seq), constant(identity), constant(np.zeros(3))).data, seq)
    bias = np.array([0.5, -1.0])
    out = conv1d_valid(constant(seq), constant(np.zeros((3, 3, 2))), constant(bias)).data
    np.testing.assert_array_equal(out, np.tile(bias, (3, 1)))


def test_conv1d_and_max_pool_match_loop_oracles():
    rng = np.random.default_rng(11)
    for _ in range(100):
        w = int(rng.integers(1, 4))
        k = int(rng.integers(w, w + 5))
        d_in, d_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        seq, filters, bias = rng.normal(size=(k, d_in)), rng.normal(size=(w, d_in, d_out)), rng.normal(size=d_out)
        conv = conv1d_valid(constant(seq), constant(filters), constant(bias)).data
        np.testing.assert_allclose(conv, _conv_oracle(seq, filters, bias), atol=1e-12)
        pooled = max_pool_time(constant(conv)).data
        scan = [max(conv[t, c] for t in range(conv.shape[0])) for c in range(conv.shape[1])]
        np.testing.assert_allclose(pooled, scan, atol=1e-12)


def test_conv1d_rejects_short_sequence():
    with pytest.raises(ShapeError):
        conv1d_valid(constant(np.zeros((2, 1))), constant(np.zeros((3, 1, 1))), constant(np.zeros(1)))


def test_max_pool_constant_and_single_step():
    np.testing.assert_array_equal(max_pool_time(constant(np.full((4, 2), 3.0))).data, [3.0, 3.0])
    np.testing.assert_array_equal(max_pool_time(constant([[1.0, -2.0]])).data, [1.0, -2.0])


def test_max_pool_tie_routes_gradient_to_first():
    x = _param([[1.0], [1.0]])
    with Tape() as tape:
        tape.backward(tsum(max_pool_time(x)))
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0]])


def test_gather_rows_out_of_range():
    with pytest.raises(IndexRangeError):
        gather_rows(constant(np.zeros((3, 2))), [0, 3])


def test_non_finite_forward_is_an_error():
    with pytest.raises(NumericalError):
        log(constant([0.0]))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def test_product_rule_and_sum():
    x, y = _param(2.0), _param(3.0)
    with Tape() as tape:
        tape.backward(mul(x, y))
    assert x.grad == 3.0 and y.grad == 2.0

    v = _param([1.0, -2.0, 4.0])
    with Tape():
        root = tsum(v)
        backward(root)
    np.testing.assert_array_equal(v.grad, np.ones(3))


def test_shared_leaf_gradients_accumulate():
    x = _param(3.0)
    with Tape() as tape:
        tape.backward(x * x + x)
    assert x.grad == pytest.approx(7.0)


def test_gather_rows_sparse_gradient_with_repeats():
    table = _param(np.arange(8.0).reshape(4, 2))
    with Tape() as tape:
        tape.backward(tsum(gather_rows(table, [1, 3, 1])))
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_no_recording_without_tape():
    x = _param([1.0, 2.0])
    y = tanh(x)
    assert not y.requires_grad
    with pytest.raises(TapeError):
        backward(tsum(y))


def test_tape_misuse_is_reported():
    x = _param([1.0, 2.0])
    with Tape() as tape:
        v = tanh(x)
        with pytest.raises(TapeError):
            tape.backward(v)
        root = tsum(v)
        tape.backward(root)
        with pytest.raises(TapeError):
            tape.backward(root)
    other = Tape()
    with Tape():
        stray = tsum(tanh(x))
    with pytest.raises(TapeError):
        other.backward(stray)


def test_tape_is_thread_local():
    x = _param([0.5])
    recorded = []
    with Tape() as tape:
        worker = threading.Thread(target=lambda: recorded.append(tanh(x).requires_grad))
        worker.start()
        worker.join()
        assert len(tape) == 0
    assert recorded == [False]


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(5)
    W = _param(rng.normal(size=(3, 4)))
    b = _param(rng.normal(size=3))
    x = _param(rng.normal(size=(5, 4)))
    mask = [True, True, False, True, True]

    def f():
        h = tanh(x)
        scores = softmax_rows(matmul(W, transpose(h)), mask)
        pooled = max_pool_time(matmul(scores, x))
        return mean(stack([sigmoid(pooled), tanh(pooled)])) + tsum(mul(b, b))

    report = grad_check(f, {"W": W, "b": b, "x": x}, h=1e-5, tol=1e-6)
    assert report.passed, report.to_dict()


def _cell_inputs(seed, hidden=3, width=2):
    rng = np.random.default_rng(seed)
    weights = [_param(rng.normal(size=(hidden, hidden + width))) for _ in range(4)]
    biases = [_param(rng.normal(size=hidden)) for _ in range(4)]
    return weights, biases, _param(rng.normal(size=hidden)), _param(rng.normal(size=width)), _param(rng.normal(size=hidden))


def test_lstm_cell_matches_gate_formulas():
    weights, biases, h, x, c = _cell_inputs(1)
    z = np.concatenate([h.data, x.data])
    f, i, g, o = (w.data @ z + b.data for w, b in zip(weights, biases))
    f, i, o = (1.0 / (1.0 + np.exp(-a)) for a in (f, i, o))
    c_t = f * c.data + i * np.tanh(g)
    out = lstm_cell(weights, biases, h, x, c).data
    np.testing.assert_allclose(out[1], c_t, atol=1e-12)
    np.testing.assert_allclose(out[0], o * np.tanh(c_t), atol=1e-12)


def test_lstm_cell_gradients_match_finite_differences():
    weights, biases, h, x, c = _cell_inputs(2)
    weight = constant(np.random.default_rng(3).normal(size=(2, 3)))

    def f():
        return tsum(mul(lstm_cell(weights, biases, h, x, c), weight))

    named = {f"w{k}": w for k, w in enumerate(weights)} | {f"b{k}": b for k, b in enumerate(biases)}
    report = grad_check(f, named | {"h": h, "x": x, "c": c}, h=1e-5, tol=1e-6)
    assert report.passed, report.to_dict()


def test_lstm_cell_rejects_mismatched_shapes():
    weights, biases, h, x, c = _cell_inputs(4)
    with pytest.raises(ShapeError):
        lstm_cell(weights[:3], biases, h, x, c)
    with pytest.raises(ShapeError):
        lstm_cell(weights, biases, h, constant(np.zeros(5)), c)


def test_grad_check_exact_cases():
    x = _param(1.0)
    report = grad_check(lambda: mul(x, x), [x])
    assert report.max_abs_error <= 1e-10
    y = _param(2.0)
    report = grad_check(lambda: mul(y, 3.0), [y])
    assert report.passed and report.max_abs_error <= 1e-9


def test_grad_check_catches_corrupted_gradient():
    x = _param([0.3, -0.7])
    report = grad_check(lambda: tsum(tanh(x)), {"x": x}, grad_hook=lambda name, g: g + 1e-2)
    assert not report.passed
    assert {f.param for f in report.failures} == {"x"}
