"""Dense float64 tensors with a reverse-mode gradient tape.

Only two broadcasting forms exist: scalar-vs-tensor and equal shapes.
Row-wise bias addition and gathers are explicit ops instead.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float64

_grad_enabled = True
_branches: list | None = None


class DimensionError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def branch_trace() -> Iterator[list]:
    """Collect the branch taken by every piecewise op (relu signs, max winners).

    Two evaluations with equal traces lie on the same smooth piece.
    """
    global _branches
    prev, _branches = _branches, []
    try:
        yield _branches
    finally:
        _branches = prev


def _check_finite(arr: np.ndarray, where: str) -> None:
    # cheap path: a finite sum means every entry is finite; an overflowing sum
    # of finite entries falls through to the exact test
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.add.reduce(arr, axis=None)
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.array(data, dtype=DTYPE) if op == "leaf" else np.asarray(data, dtype=DTYPE)
        _check_finite(arr, op)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if (requires_grad and op == "leaf") else None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Back-propagate from this tensor into every reachable leaf's ``grad``."""
        if self.data.ndim != 0 and seed is None:
            raise DimensionError("backward() without seed needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # interior nodes get a fresh buffer on every pass
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.ones_like(self.data) if seed is None else np.broadcast_to(seed, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


# --------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(out, (a, b), backward, "matmul")


def bias_add(x, bias) -> Tensor:
    """Add a length-d vector to every row of an (n, d) matrix."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias_add shapes {x.shape} and {bias.shape}")
    out = x.data + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _result(out, (x, bias), backward, "bias_add")


# ---------------------------------------------------------------- elementwise


def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(x, k: float) -> Tensor:
    x = as_tensor(x)
    k = float(k)

    def backward(g):
        x._accumulate(g * k)

    return _result(x.data * k, (x,), backward, "scale")


def square(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _result(x.data * x.data, (x,), backward, "square")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _branches is not None:
        _branches.append(mask)

    def backward(g):
        x._accumulate(g * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def backward(g):
        x._accumulate(g * _sigmoid(x.data))

    return _result(out, (x,), backward, "softplus")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), backward, "sigmoid")


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against targets."""
    logits, targets = _pair(logits, targets, "bce_with_logits")
    z, y = logits.data, targets.data
    out = np.logaddexp(0.0, z) - y * z

    def backward(g):
        if logits.requires_grad:
            logits._accumulate(g * (_sigmoid(z) - y))

    return _result(out, (logits, targets), backward, "bce_with_logits")


# ----------------------------------------------------------------- reductions


def _nonempty(x: Tensor, op: str) -> None:
    if x.size == 0:
        raise EmptyInputError(f"{op} of an empty tensor")


def sum(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    _nonempty(x, "sum")

    def backward(g):
        x._accumulate(np.full(x.shape, float(g)))

    return _result(np.asarray(x.data.sum()), (x,), backward, "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    _nonempty(x, "mean")
    n = x.size

    def backward(g):
        x._accumulate(np.full(x.shape, float(g) / n))

    return _result(np.asarray(x.data.mean()), (x,), backward, "mean")


def segment_max(x, starts: np.ndarray) -> Tensor:
    """Column-wise max over contiguous row segments of a 2-D tensor.

    ``starts`` holds the first row of each segment (strictly increasing,
    starting at 0). Gradient goes to the first maximal row of each segment.
    """
    x = as_tensor(x)
    _nonempty(x, "segment_max")
    if x.data.ndim != 2:
        raise DimensionError("segment_max expects a 2-D tensor")
    starts = np.asarray(starts, dtype=np.intp)
    out = np.maximum.reduceat(x.data, starts, axis=0)
    if _branches is not None:
        _branches.append(x.data == np.repeat(out, np.diff(np.append(starts, x.shape[0])), axis=0))

    def backward(g):
        n = x.shape[0]
        lengths = np.diff(np.append(starts, n))
        hit = x.data == np.repeat(out, lengths, axis=0)
        rows = np.where(hit, np.arange(n)[:, None], n)
        first = np.minimum.reduceat(rows, starts, axis=0)
        gx = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.shape[1]), first.shape)
        gx[first, cols] = g
        x._accumulate(gx)

    return _result(out, (x,), backward, "segment_max")


def max_over_rows(x) -> Tensor:
    """Column-wise maximum of an (n, d) tensor, returned as a length-d vector."""
    x = as_tensor(x)
    _nonempty(x, "max_over_rows")
    return reshape(segment_max(x, np.zeros(1, dtype=np.intp)), (x.shape[1],))


# ----------------------------------------------------------------- structural


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(out, (x,), backward, "reshape")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _result(out, ts, backward, "concat")


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Rows of ``x`` selected by ``index`` (repeats allowed); backward scatter-adds."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        n = x.shape[0]
        scatter = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
        gx = scatter @ g.reshape(len(index), -1)
        x._accumulate(np.asarray(gx).reshape(x.shape))

    return _result(out, (x,), backward, "gather_rows")


# ------------------------------------------------------------------ parameters


class ModelParams:
    """Ordered, uniquely named collection of parameter tensors."""

    VERSION = 1

    def __init__(self, entries: Iterable[tuple[str, np.ndarray | Tensor]] = (), version: int = VERSION):
        self.version = version
        self._entries: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in entries:
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data, requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(((k, v.data.copy()) for k, v in self._entries.items()), self.version)

    def subset(self, prefix: str) -> "ModelParams":
        out = ModelParams(version=self.version)
        for k, v in self._entries.items():
            if k.startswith(prefix):
                out._entries[k] = v
        return out

    def merge(self, other: "ModelParams") -> None:
        for k, v in other.items():
            if k in self._entries:
                raise KeyError(f"duplicate parameter name {k!r}")
            self._entries[k] = v

    def num_scalars(self) -> int:
        return int(np.sum([t.size for t in self._entries.values()]))
