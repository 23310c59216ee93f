"""Dense float64 tensors with a recorded-operation tape.

Every op checks shapes up front, computes its forward value with numpy, and --
when a tape is active in the current thread and any input requires grad --
records a node holding the closure that maps the output gradient back to
input gradients. ``Tape.backward`` replays the nodes in reverse order.

Without an active tape nothing is recorded, which is how inference runs:

    with Tape() as tape:
        loss = build_loss()
        tape.backward(loss)

There is no implicit broadcasting beyond tensor-with-scalar.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from numbers import Real
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import GRADCHECK_ATOL, GRADCHECK_STEP, LOG_LEVEL
from core.errors import IndexRangeError, NumericalError, ShapeError, TapeError

logger = logging.getLogger("atlstm.tensor")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

DTYPE = np.float64


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """Row-major float64 buffer that may take part in a recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=DTYPE)
        if any(dim <= 0 for dim in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out.name = ""
        out._tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def constant(data) -> Tensor:
    """A tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class RowGrad:
    """Sparse gradient for a row gather: ``values[k]`` belongs to row ``ids[k]``."""

    ids: np.ndarray
    values: np.ndarray

    def dense(self, shape: tuple[int, ...]) -> np.ndarray:
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, self.ids, self.values)
        return out


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | RowGrad | None"]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    """The innermost tape opened in this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class Tape:
    """Ordered record of the ops that produced a graph.

    A tape belongs to the thread that opened it. Nodes are appended as ops run,
    so inputs always precede their consumers.
    """

    nodes: list[Node] = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        node.output._tape = self
        self.nodes.append(node)

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()
        self._consumed = False

    def backward(self, root: Tensor) -> None:
        """Populate ``grad`` of every tensor that ``root`` depends on.

        Leaf gradients accumulate across calls on different tapes, so a batch
        can be processed one sample per tape.
        """
        if root.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
        if root._tape is not self:
            raise TapeError("backward root was not recorded on this tape")
        if self._consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self._consumed = True

        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            grad_out = pending.pop(id(node.output), None)
            if grad_out is None:
                continue
            node.output.grad = grad_out
            contributions = node.backward(grad_out)
            for tensor, contrib in zip(node.inputs, contributions):
                if contrib is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self:
                    if isinstance(contrib, RowGrad):
                        contrib = contrib.dense(tensor.shape)
                    key = id(tensor)
                    if key in pending:
                        pending[key] = pending[key] + contrib
                    else:
                        pending[key] = contrib
                else:
                    _accumulate_leaf(tensor, contrib)


def _accumulate_leaf(tensor: Tensor, contrib: np.ndarray | RowGrad) -> None:
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    if isinstance(contrib, RowGrad):
        np.add.at(tensor.grad, contrib.ids, contrib.values)
    else:
        tensor.grad += contrib


def backward(root: Tensor) -> None:
    """Differentiate ``root`` on the tape it was recorded on."""
    if root._tape is None:
        raise TapeError("backward root is not on a tape (was it built inside `with Tape()`?)")
    root._tape.backward(root)


# ---------------------------------------------------------------------------
# Op plumbing
# ---------------------------------------------------------------------------


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, Real):
        return Tensor._wrap(np.array(float(value), dtype=DTYPE))
    raise TypeError(f"expected Tensor or real scalar, got {type(value).__name__}")


def _result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, inputs, out, backward_fn))
    return out


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to a scalar operand's shape."""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=DTYPE).reshape(shape)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result("add", a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    a_data, b_data = a.data, b.data

    def _backward(g):
        return _reduce_to(g * b_data, a.shape), _reduce_to(g * a_data, b.shape)

    return _result("mul", a_data * b_data, (a, b), _backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def _backward(g):
        return (g * (1.0 - y * y),)

    return _result("tanh", y, (x,), _backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form stays finite for any input and gives exactly 0.5 at 0
    y = _sigmoid_np(x.data)

    def _backward(g):
        return (g * y * (1.0 - y),)

    return _result("sigmoid", y, (x,), _backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericalError("log of a non-positive value")
    x_data = x.data

    def _backward(g):
        return (g / x_data,)

    return _result("log", np.log(x_data), (x,), _backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp values; the gradient is zero where the clamp is active."""
    x_data = x.data
    inside = (x_data >= low) & (x_data <= high)

    def _backward(g):
        return (g * inside,)

    return _result("clip", np.clip(x_data, low, high), (x,), _backward)


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {"tanh": tanh, "sigmoid": sigmoid}
_BINARY: dict[str, Callable[[Tensor, Tensor], Tensor]] = {"add": add, "mul": mul, "sub": sub}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch one of the pointwise ops by name."""
    if kind in _UNARY:
        if len(args) != 1:
            raise ShapeError(f"{kind} takes one argument, got {len(args)}")
        return _UNARY[kind](args[0])
    if kind in _BINARY:
        if len(args) != 2:
            raise ShapeError(f"{kind} takes two arguments, got {len(args)}")
        return _BINARY[kind](*args)
    raise ValueError(f"unknown elementwise kind {kind!r}; expected one of "
                     f"{sorted(_UNARY) + sorted(_BINARY)}")


# ---------------------------------------------------------------------------
# Linear algebra and reductions
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a 1-D operand acts as a vector on its side."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g):
        if a_data.ndim == 2 and b_data.ndim == 2:
            return g @ b_data.T, a_data.T @ g
        if a_data.ndim == 2:
            return np.outer(g, b_data), a_data.T @ g
        if b_data.ndim == 2:
            return b_data @ g, np.outer(a_data, g)
        return g * b_data, g * a_data

    return _result("matmul", np.asarray(a_data @ b_data, dtype=DTYPE), (a, b), _backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")

    def _backward(g):
        return (g.T,)

    return _result("transpose", np.ascontiguousarray(x.data.T), (x,), _backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    original = x.shape

    def _backward(g):
        return (g.reshape(original),)

    return _result("reshape", x.data.reshape(shape).copy(), (x,), _backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    shape = x.shape

    def _backward(g):
        return (np.full(shape, float(g), dtype=DTYPE),)

    return _result("sum", np.asarray(x.data.sum(), dtype=DTYPE), (x,), _backward)


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; every other dimension must agree."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    if not -first.ndim <= axis < first.ndim:
        raise ShapeError(f"concat axis {axis} out of range for shape {first.shape}")
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, first.shape)) if i != axis
        ):
            raise ShapeError(
                f"concat on axis {axis}: inconsistent shapes {[tuple(t.shape) for t in tensors]}"
            )
    if len(tensors) == 1:
        return first
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result("concat", data, tuple(tensors), _backward)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors as the rows of a new leading axis."""
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError(f"stack needs equal shapes, got {[tuple(t.shape) for t in tensors]}")

    def _backward(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _result("stack", np.stack([t.data for t in tensors]), tuple(tensors), _backward)


def row(x: Tensor, index: int) -> Tensor:
    """Row ``index`` of a matrix as a vector."""
    if x.ndim != 2 or not 0 <= index < x.shape[0]:
        raise ShapeError(f"row {index} out of range for shape {x.shape}")
    shape = x.shape

    def _backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[index] = g
        return (out,)

    return _result("row", x.data[index].copy(), (x,), _backward)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of ``table`` picked by ``ids`` (embedding lookup)."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or idx.ndim != 1 or idx.size == 0:
        raise ShapeError(f"gather_rows needs a matrix and a nonempty id list, got {table.shape}")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        bad = int(idx[(idx < 0) | (idx >= table.shape[0])][0])
        raise IndexRangeError(f"id {bad} out of range for table with {table.shape[0]} rows")

    def _backward(g):
        return (RowGrad(idx, g),)

    return _result("gather_rows", table.data[idx], (table,), _backward)


# ---------------------------------------------------------------------------
# Neural kernels
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor, mask: Sequence[bool] | np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with max subtraction.

    Columns where ``mask`` is False get exactly zero weight and the row is
    renormalised over the remaining columns.
    """
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs an r×n matrix with n >= 1, got {x.shape}")
    z = x.data
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != (x.shape[1],):
            raise ShapeError(f"mask length {keep.shape} does not match {x.shape[1]} columns")
        if not keep.any():
            raise ShapeError("softmax over a fully masked row")
        z = np.where(keep, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result("softmax_rows", y, (x,), _backward)


def lstm_cell(
    weights: Sequence[Tensor], biases: Sequence[Tensor], h_prev: Tensor, x_t: Tensor, c_prev: Tensor,
) -> Tensor:
    """One LSTM step as a single node; returns the 2×hidden matrix [h_t ; c_t].

    ``weights`` and ``biases`` are the forget, input, candidate and output
    gate parameters in that order, each weight hidden×(hidden+input) acting
    on [h_prev ; x_t].
    """
    if len(weights) != 4 or len(biases) != 4:
        raise ShapeError(f"lstm_cell needs 4 gate weights and 4 biases, got {len(weights)}/{len(biases)}")
    hidden = h_prev.size
    width = hidden + x_t.size
    if (
        h_prev.ndim != 1 or x_t.ndim != 1 or c_prev.shape != (hidden,)
        or any(w.shape != (hidden, width) for w in weights)
        or any(b.shape != (hidden,) for b in biases)
    ):
        raise ShapeError(
            f"lstm_cell shapes: weights {[w.shape for w in weights]}, biases {[b.shape for b in biases]}, "
            f"h {h_prev.shape}, x {x_t.shape}, c {c_prev.shape}"
        )

    z = np.concatenate([h_prev.data, x_t.data])
    c_in = c_prev.data
    w_f, w_i, w_c, w_o = (w.data for w in weights)
    f = _sigmoid_np(w_f @ z + biases[0].data)
    i = _sigmoid_np(w_i @ z + biases[1].data)
    g = np.tanh(w_c @ z + biases[2].data)
    o = _sigmoid_np(w_o @ z + biases[3].data)
    c = f * c_in + i * g
    tc = np.tanh(c)
    h = o * tc

    def _backward(grad):
        dh, dc = grad[0], grad[1] + grad[0] * o * (1.0 - tc * tc)
        da_f = dc * c_in * f * (1.0 - f)
        da_i = dc * g * i * (1.0 - i)
        da_c = dc * i * (1.0 - g * g)
        da_o = dh * tc * o * (1.0 - o)
        gates = (da_f, da_i, da_c, da_o)
        dz = w_f.T @ da_f + w_i.T @ da_i + w_c.T @ da_c + w_o.T @ da_o
        return (
            *(np.outer(d, z) for d in gates),
            *gates,
            dz[:hidden],
            dz[hidden:],
            dc * f,
        )

    inputs = (*weights, *biases, h_prev, x_t, c_prev)
    return _result("lstm_cell", np.stack([h, c]), inputs, _backward)


def conv1d_valid(seq: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D cross-correlation over time plus bias.

    seq is k×d_in, filters w×d_in×d_out, bias d_out; output (k-w+1)×d_out.
    """
    if seq.ndim != 2 or filters.ndim != 3 or bias.ndim != 1:
        raise ShapeError(f"conv1d_valid shapes: seq {seq.shape}, filters {filters.shape}, bias {bias.shape}")
    k, d_in = seq.shape
    width, f_in, d_out = filters.shape
    if f_in != d_in or bias.shape[0] != d_out:
        raise ShapeError(f"conv1d_valid shapes: seq {seq.shape}, filters {filters.shape}, bias {bias.shape}")
    if k < width:
        raise ShapeError(f"sequence of length {k} is shorter than filter width {width}")

    steps = k - width + 1
    # windows[t] is the w×d_in slice starting at t, flattened
    windows = np.ascontiguousarray(
        sliding_window_view(seq.data, width, axis=0).transpose(0, 2, 1)
    ).reshape(steps, width * d_in)
    kernel = filters.data.reshape(width * d_in, d_out)

    def _backward(g):
        d_kernel = (windows.T @ g).reshape(width, d_in, d_out)
        d_windows = (g @ kernel.T).reshape(steps, width, d_in)
        d_seq = np.zeros((k, d_in), dtype=DTYPE)
        for j in range(width):
            d_seq[j:j + steps] += d_windows[:, j, :]
        return d_seq, d_kernel, g.sum(axis=0)

    return _result("conv1d_valid", windows @ kernel + bias.data, (seq, filters, bias), _backward)


def max_pool_time(x: Tensor) -> Tensor:
    """Per-channel max over the time axis; ties go to the first occurrence."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"max_pool_time needs a k×d matrix with k >= 1, got {x.shape}")
    arg = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])
    shape = x.shape

    def _backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[arg, cols] = g
        return (out,)

    return _result("max_pool_time", x.data[arg, cols].copy(), (x,), _backward)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckFailure:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    per_param: dict[str, float]
    checked: int
    failures: list[GradCheckFailure]
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "checked_coordinates": self.checked,
            "per_param": dict(self.per_param),
            "failures": [vars(f) | {"index": list(f.index)} for f in self.failures[:20]],
        }


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    h: float = GRADCHECK_STEP,
    tol: float = 1e-6,
    *,
    atol: float = GRADCHECK_ATOL,
    max_coords: int | None = None,
    seed: int = 0,
    grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` with central finite differences.

    ``f`` must rebuild its graph from ``params`` on every call and return a
    scalar. Relative error per coordinate is |a-n| / max(|a|, |n|, 1e-8); a
    coordinate fails when that exceeds ``tol`` and |a-n| exceeds ``atol``.
    ``max_coords`` samples at most that many coordinates per parameter.
    ``grad_hook`` may rewrite analytic gradients before comparison.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    named = dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}

    for p in named.values():
        p.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic: dict[str, np.ndarray] = {}
    for name, p in named.items():
        grad = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        analytic[name] = grad_hook(name, grad) if grad_hook is not None else grad

    def _loss_value() -> float:
        value = f().item()
        if not np.isfinite(value):
            raise NumericalError("non-finite loss while taking finite differences")
        return value

    rng = np.random.default_rng(seed)
    failures: list[GradCheckFailure] = []
    per_param: dict[str, float] = {}
    max_rel = max_abs = 0.0
    checked = 0
    for name, p in named.items():
        coords = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        flat = p.data.reshape(-1)
        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + h
            plus = _loss_value()
            flat[c] = original - h
            minus = _loss_value()
            flat[c] = original
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[c])
            abs_err = abs(a - numeric)
            rel = abs_err / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            max_abs = max(max_abs, abs_err)
            if abs_err <= atol:
                continue
            worst = max(worst, rel)
            if rel > tol:
                failures.append(GradCheckFailure(
                    name, tuple(int(i) for i in np.unravel_index(c, p.shape)), a, numeric, rel,
                ))
        per_param[name] = worst
        max_rel = max(max_rel, worst)

    logger.info("[GRADCHECK] coords=%d max_rel=%.3e failures=%d", checked, max_rel, len(failures))
    return GradCheckReport(max_rel, max_abs, per_param, checked, failures, tol)
