"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

Every value in the model is a strictly two-dimensional :class:`Tensor`.  While
a :class:`Tape` is active on the current thread, each operation whose inputs
require gradients records a closure that knows how to push the output gradient
back onto its parents.  Because operations are recorded in execution order,
the tape is already topologically sorted and ``Tape.backward`` just replays it
in reverse, accumulating into ``Tensor.grad`` buffers.  A tape can be consumed
exactly once; rerun the forward pass to differentiate again.

Gradients are checked against central finite differences by
:func:`grad_check`, which treats the computation as a black box and therefore
exercises the same code paths the model uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "repeat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "gather",
    "sum",
    "mean_rows",
    "relu",
    "tanh",
    "exp",
    "log",
    "clamp",
    "smooth_l1",
    "row_softmax",
    "layer_norm",
    "l2_normalize_rows",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Differentiation-graph misuse: non-scalar loss, detached loss, tape re-use."""


_STATE = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_STATE, "tape", None)


class Tensor:
    """A ``rows x cols`` matrix of float64 values, optionally tracked on a tape.

    ``data`` is the backing row-major numpy array.  ``grad`` starts as None and
    is filled by ``Tape.backward`` for every tensor that participated in the
    taped computation with ``requires_grad`` set.  ``node`` is the handle into
    the tape that produced this tensor, or None for leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are strictly 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[tuple] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def backward(self) -> None:
        backward(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered record of differentiable operations.

    Use as a context manager around the forward pass; ops executed while the
    tape is active are appended in order, so the record is topologically
    sorted by construction and backward() visits each node exactly once.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False
        self._outer: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> bool:
        _STATE.tape = self._outer
        self._outer = None
        return False

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and replay the record in reverse, once."""
        if self._consumed:
            raise TapeError("tape already consumed by backward(); rerun the forward pass")
        if loss.data.shape != (1, 1):
            raise TapeError(f"backward needs a 1x1 scalar loss, got shape {loss.data.shape}")
        if loss.node is None or loss.node[0] is not self:
            raise TapeError("loss was not produced on this tape")
        self._consumed = True
        loss.grad = np.ones((1, 1))
        for out, push in reversed(self._entries):
            if out.grad is None:
                # not upstream of the loss: zero gradient flows through
                out.grad = np.zeros_like(out.data)
            push(out.grad)


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation on the tape that produced ``loss``."""
    if loss.node is None:
        raise TapeError("loss is not attached to a tape; run the forward pass inside one")
    loss.node[0].backward(loss)


def _result(data: np.ndarray, parents: Sequence[Tensor], push) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._entries.append((out, push))
        out.node = (tape, len(tape._entries) - 1)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = np.array(g) if t.grad is None else t.grad + g


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes disagree: {a.data.shape} vs {b.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``; inner dimensions must agree."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.data.shape} @ {b.data.shape}")

    def push(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), push)


def transpose(a: Tensor) -> Tensor:
    def push(g):
        _accum(a, g.T)

    return _result(np.ascontiguousarray(a.data.T), (a,), push)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def push(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), push)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def push(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), push)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly (no implicit broadcast)."""
    _check_same_shape("mul", a, b)

    def push(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), push)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def push(g):
        _accum(a, g * s)

    return _result(a.data * s, (a,), push)


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """Broadcast-add a 1 x q row onto every row of a p x q matrix."""
    if row.rows != 1 or row.cols != a.cols:
        raise ShapeError(
            f"add_row: need a (1, {a.cols}) row for a {a.data.shape} matrix, got {row.data.shape}"
        )

    def push(g):
        _accum(a, g)
        _accum(row, g.sum(axis=0, keepdims=True))

    return _result(a.data + row.data, (a, row), push)


def repeat_rows(row: Tensor, n: int) -> Tensor:
    """Tile a 1 x q row into an n x q matrix."""
    if row.rows != 1:
        raise ShapeError(f"repeat_rows: expected a single row, got shape {row.data.shape}")
    if n < 1:
        raise ShapeError(f"repeat_rows: need n >= 1, got {n}")

    def push(g):
        _accum(row, g.sum(axis=0, keepdims=True))

    return _result(np.repeat(row.data, n, axis=0), (row,), push)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols: row counts disagree: {a.data.shape} vs {b.data.shape}")
    split = a.cols

    def push(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), push)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.rows):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for shape {a.data.shape}")

    def push(g):
        z = np.zeros_like(a.data)
        z[start:stop] = g
        _accum(a, z)

    return _result(a.data[start:stop].copy(), (a,), push)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.data.shape}")

    def push(g):
        z = np.zeros_like(a.data)
        z[:, start:stop] = g
        _accum(a, z)

    return _result(a.data[:, start:stop].copy(), (a,), push)


def gather(a: Tensor, row_idx, col_idx) -> Tensor:
    """Pick entries ``a[row_idx[k], col_idx[k]]`` into a 1 x n row.

    Index arrays are constants; gradients scatter-add back through the values.
    """
    rows = np.asarray(row_idx, dtype=np.intp)
    cols = np.asarray(col_idx, dtype=np.intp)
    if rows.ndim != 1 or rows.shape != cols.shape or rows.size == 0:
        raise ShapeError(f"gather: index arrays must be equal-length 1-D and nonempty, "
                         f"got {rows.shape} and {cols.shape}")
    if rows.min() < 0 or rows.max() >= a.rows or cols.min() < 0 or cols.max() >= a.cols:
        raise ShapeError(f"gather: indices out of range for shape {a.data.shape}")

    def push(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, cols), g[0])
        _accum(a, z)

    return _result(a.data[rows, cols][None, :].copy(), (a,), push)


def sum(a: Tensor) -> Tensor:
    """Total of all entries as a 1 x 1 tensor."""

    def push(g):
        _accum(a, np.full_like(a.data, g[0, 0]))

    return _result(np.array([[a.data.sum()]]), (a,), push)


def mean_rows(a: Tensor) -> Tensor:
    """Column means: p x q -> 1 x q."""
    n = a.rows

    def push(g):
        _accum(a, np.repeat(g / n, n, axis=0))

    return _result(a.data.mean(axis=0, keepdims=True), (a,), push)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at the kink

    def push(g):
        _accum(a, g * mask)

    return _result(np.maximum(a.data, 0.0), (a,), push)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def push(g):
        _accum(a, g * (1.0 - y * y))

    return _result(y, (a,), push)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def push(g):
        _accum(a, g * y)

    return _result(y, (a,), push)


def log(a: Tensor) -> Tensor:
    """Elementwise natural log; inputs must be positive for finite output."""

    def push(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), push)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the value was strictly inside."""
    if not lo < hi:
        raise ValueError(f"clamp: need lo < hi, got [{lo}, {hi}]")
    inside = (a.data > lo) & (a.data < hi)

    def push(g):
        _accum(a, g * inside)

    return _result(np.clip(a.data, lo, hi), (a,), push)


def smooth_l1(a: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber-style penalty: quadratic inside ``|x| < delta``, linear outside."""
    if delta <= 0:
        raise ValueError(f"smooth_l1: need delta > 0, got {delta}")
    small = np.abs(a.data) < delta
    y = np.where(small, 0.5 * a.data * a.data / delta, np.abs(a.data) - 0.5 * delta)
    slope = np.where(small, a.data / delta, np.sign(a.data))

    def push(g):
        _accum(a, g * slope)

    return _result(y, (a,), push)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax independently over each row, shift-stabilized."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def push(g):
        _accum(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _result(y, (a,), push)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and unit population variance, then apply
    a learnable per-column gain and bias."""
    if a.cols < 2:
        raise ShapeError(f"layer_norm: need at least 2 columns, got shape {a.data.shape}")
    for name, t in (("gain", gain), ("bias", bias)):
        if t.data.shape != (1, a.cols):
            raise ShapeError(
                f"layer_norm: {name} must be (1, {a.cols}), got {t.data.shape}"
            )
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def push(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        _accum(a, inv * (dxhat - m1 - xhat * m2))
        _accum(gain, (g * xhat).sum(axis=0, keepdims=True))
        _accum(bias, g.sum(axis=0, keepdims=True))

    return _result(xhat * gain.data + bias.data, (a, gain, bias), push)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm; rows with norm < 1e-12 pass through."""
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    safe = norms >= 1e-12
    denom = np.where(safe, norms, 1.0)
    y = a.data / denom

    def push(g):
        dot = (y * g).sum(axis=1, keepdims=True)
        _accum(a, np.where(safe, (g - y * dot) / denom, g))

    return _result(y, (a,), push)


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    Runs ``f`` once under a fresh tape to collect analytic gradients, then
    perturbs every entry of every parameter by +/- step and re-evaluates.
    Returns the worst relative error ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = grads.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = f().item()
            flat[k] = orig - step
            lo = f().item()
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * step)
            err = abs(aflat[k] - numeric) / max(1e-8, abs(aflat[k]) + abs(numeric))
            if err > worst:
                worst = err
    return worst
