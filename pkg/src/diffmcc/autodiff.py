"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation appends one record to the active :class:`Tape`.
``backward`` walks that record once, newest first, and accumulates gradients
into every tensor that requires them.

Broadcasting is deliberately narrow: binary elementwise operations accept
operands of identical shape, or one 0-d operand (python scalar or 0-d tensor).
Row-vector bias addition has its own operator, :func:`bias_add`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

EPS = 1e-12


class DimensionError(ValueError):
    pass


class BoundsError(IndexError):
    pass


class NumericDomainError(ArithmeticError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array that may participate in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr is data and requires_grad:
            arr = arr.copy()
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out, inputs, backward_fn, op):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Append-only record of differentiable operations, confined to one thread.

    Use as a context manager to make it the active tape for the current thread::

        with Tape() as tape:
            loss = f(params)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self.records]

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> None:
        if self._consumed:
            raise ContractError("tape already consumed by backward(); call reset() before reuse")
        out.requires_grad = True
        out.tape = self
        out.node_id = len(self.records)
        for t in inputs:
            if t.requires_grad and t.tape is None:
                self._leaves[id(t)] = t
        self.records.append(_Record(out, inputs, backward_fn, op))

    def backward(self, root: Tensor) -> None:
        if root.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
        if root.tape is not self:
            raise ContractError("root was not recorded on this tape")
        if self._consumed:
            raise ContractError("backward() called twice on the same tape without reset()")
        self._consumed = True
        root.grad = np.ones_like(root.data)
        for rec in reversed(self.records[: root.node_id + 1]):
            g = rec.out.grad
            if g is None:
                continue
            in_grads = rec.backward_fn(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(gi, dtype=np.float64, copy=True).reshape(t.shape)
                else:
                    t.grad = t.grad + gi

    def reset(self) -> None:
        """Drop all records and clear the gradients of leaves seen by this tape."""
        for rec in self.records:
            rec.out.grad = None
            rec.out.tape = None
        for leaf in self._leaves.values():
            leaf.grad = None
        self.records = []
        self._leaves = {}
        self._consumed = False


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = [Tape()]
        _local.enabled = True
    return stack


def current_tape() -> Tape:
    return _stack()[-1]


def _grad_enabled() -> bool:
    _stack()
    return _local.enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them."""
    _stack()
    prev = _local.enabled
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of everything reachable from the scalar ``root``."""
    if root.size != 1:
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    if root.tape is None:
        if root.requires_grad:
            g = np.ones_like(root.data)
            root.grad = g if root.grad is None else root.grad + g
        return
    root.tape.backward(root)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        current_tape()._record(out, inputs, backward_fn, op)
    return out


# ---------------------------------------------------------------- binary ops


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcast is allowed)")
    return a, b


def _fit(g: np.ndarray, t: Tensor) -> np.ndarray:
    # undo scalar broadcast
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return _out(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return _out(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def bw(g):
        ga = _fit(g * b.data, a) if a.requires_grad else None
        gb = _fit(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _out(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    if np.any(b.data == 0.0):
        raise NumericDomainError("div: zero denominator")
    q = a.data / b.data

    def bw(g):
        ga = _fit(g / b.data, a) if a.requires_grad else None
        gb = _fit(-g * q / b.data, b) if b.requires_grad else None
        return ga, gb

    return _out(q, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _out(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, c: float) -> Tensor:
    """``a ** c`` for a constant exponent ``c``."""
    a = as_tensor(a)
    c = float(c)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.power(a.data, c)
    if not np.all(np.isfinite(y)):
        raise NumericDomainError(f"pow: non-finite result for exponent {c}")

    def bw(g):
        if c == 1.0:
            return (g,)
        return (g * c * np.power(a.data, c - 1.0),)

    return _out(y, (a,), bw, "pow")


def sqrt(a) -> Tensor:
    return power(a, 0.5)


# ----------------------------------------------------------------- unary ops


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _out(y, (a,), lambda g: (g * y,), "exp")


def log(a, eps: float = EPS) -> Tensor:
    """Natural log of ``a + eps``."""
    a = as_tensor(a)
    x = a.data + eps
    if np.any(x <= 0.0):
        raise NumericDomainError("log: operand <= 0 after guard")
    return _out(np.log(x), (a,), lambda g: (g / x,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _out(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _out(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _out(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip into ``[lo, hi]``; gradient passes only where the input was inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _out(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _out(a.data @ b.data, (a, b), bw, "matmul")


def bias_add(a, bias) -> Tensor:
    """Add a length-n vector to every row of an (m, n) matrix."""
    a, bias = as_tensor(a), as_tensor(bias)
    if a.ndim != 2 or bias.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias_add: cannot add {bias.shape} to rows of {a.shape}")
    return _out(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)), "bias_add")


# ---------------------------------------------------------------- reductions


def reduce_sum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _out(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return _out(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")


# ------------------------------------------------------------ shape plumbing


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _out(y, (a,), lambda g: (g.reshape(old),), "reshape")


def _check_key(key, shape: tuple[int, ...]) -> tuple:
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > len(shape):
        raise BoundsError(f"too many indices ({len(key)}) for shape {shape}")
    for k, dim in zip(key, shape):
        if isinstance(k, slice):
            if k.step not in (None, 1):
                raise BoundsError("strided slices are not supported")
            for end in (k.start, k.stop):
                if end is not None and not -dim <= end <= dim:
                    raise BoundsError(f"slice bound {end} out of range for axis of size {dim}")
        elif isinstance(k, (int, np.integer)):
            if not -dim <= k < dim:
                raise BoundsError(f"index {k} out of range for axis of size {dim}")
        else:
            raise BoundsError(f"unsupported index {k!r}")
    return key


def index(a, key) -> Tensor:
    """Basic (int / unit-step slice) indexing with strict bounds checking."""
    a = as_tensor(a)
    key = _check_key(key, a.shape)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _out(a.data[key].copy(), (a,), bw, "slice")


def slice_axis(a, start: int, stop: int, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    dim = a.shape[axis]
    if not 0 <= start <= stop <= dim:
        raise BoundsError(f"slice [{start}:{stop}] out of range for axis {axis} of size {dim}")
    key = (slice(None),) * axis + (slice(start, stop),)
    return index(a, key)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise DimensionError("concat: nothing to concatenate")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _out(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")
