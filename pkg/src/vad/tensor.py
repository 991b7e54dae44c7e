"""Dense rank<=2 tensors with tape-based reverse-mode differentiation.

Every tensor belongs to exactly one :class:`Tape`. Operations append a node to
the tape of their inputs; :meth:`Tape.backward` walks the nodes in reverse
insertion order once. A fresh tape is meant to be built per optimisation step,
with persistent parameters re-registered as leaves.

All data is float64. Any operation that produces NaN or Inf raises
:class:`~vad.exceptions.NumericError` immediately.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    DimensionError,
    EmptyReductionError,
    NonScalarBackwardError,
    NumericError,
    UnsupportedRankError,
)

ACTIVATIONS = ("tanh", "sigmoid", "relu", "identity")


class Tensor:
    """A node on a tape.

    Attributes:
        data: float64 array of rank 0, 1 or 2.
        requires_grad: whether gradients are accumulated into ``grad``.
        grad: zero-initialised array shaped like ``data`` when
            ``requires_grad`` is set, otherwise ``None``.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape", "id")

    def __init__(self, data: np.ndarray, tape: "Tape", requires_grad: bool = False):
        if data.ndim > 2:
            raise UnsupportedRankError(f"rank {data.ndim} > 2 is not supported")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(data) if self.requires_grad else None
        self.tape = tape
        self.id = -1

    # let ``ndarray op Tensor`` fall through to the reflected methods
    __array_ufunc__ = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis: str = "all") -> "Tensor":
        return reduce("sum", self, axis)

    def mean(self, axis: str = "all") -> "Tensor":
        return reduce("mean", self, axis)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Append-only record of operations.

    ``nodes[i]`` is ``(kind, input_ids, backward_fn)``; ``outputs[i]`` is the
    tensor produced by node ``i``. Leaves are nodes with no inputs.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple[int, ...], BackwardFn | None]] = []
        self.outputs: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, kind: str, inputs: tuple[Tensor, ...], out: Tensor,
                backward_fn: BackwardFn | None) -> Tensor:
        for t in inputs:
            if t.tape is not self:
                raise ValueError("operands belong to different tapes")
        out.tape = self
        out.id = len(self.nodes)
        self.nodes.append((kind, tuple(t.id for t in inputs), backward_fn))
        self.outputs.append(out)
        return out

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        """Register ``data`` as a leaf. The array is used without copying."""
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        return self._record("leaf", (), Tensor(arr, self, requires_grad), None)

    def constant(self, value) -> Tensor:
        return self.tensor(value, requires_grad=False)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise NonScalarBackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        for node_id in range(loss.id, -1, -1):
            g = pending.pop(node_id, None)
            if g is None:
                continue
            kind, input_ids, backward_fn = self.nodes[node_id]
            if kind == "leaf":
                out = self.outputs[node_id]
                if out.requires_grad:
                    out.grad += g
                continue
            for in_id, in_grad in zip(input_ids, backward_fn(g)):
                if in_grad is None or not self.outputs[in_id].requires_grad:
                    continue
                if in_id in pending:
                    pending[in_id] = pending[in_id] + in_grad
                else:
                    pending[in_id] = in_grad


def new_tensor(shape: Sequence[int], data: Sequence[float], requires_grad: bool = False,
               tape: Tape | None = None) -> Tensor:
    """Build a leaf tensor from a shape and flat row-major data."""
    shape = tuple(int(s) for s in shape)
    if len(shape) > 2:
        raise UnsupportedRankError(f"rank {len(shape)} > 2 is not supported")
    if any(s < 0 for s in shape):
        raise DimensionError(f"negative extent in shape {shape}")
    flat = np.asarray(data, dtype=np.float64).ravel()
    if int(np.prod(shape, dtype=np.int64)) != flat.size:
        raise DimensionError(f"shape {shape} needs {int(np.prod(shape))} values, got {flat.size}")
    tape = tape if tape is not None else Tape()
    return tape.tensor(flat.reshape(shape), requires_grad=requires_grad)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {what}")


def _as_tensor(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tape.constant(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    tape = a.tape if isinstance(a, Tensor) else getattr(b, "tape", None)
    if tape is None:
        raise TypeError("at least one operand must be a Tensor")
    return _as_tensor(a, tape), _as_tensor(b, tape)


def _result(kind: str, inputs: tuple[Tensor, ...], data: np.ndarray,
            backward_fn: BackwardFn) -> Tensor:
    _check_finite(data, kind)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, inputs[0].tape, requires_grad=False)
    out.requires_grad = requires_grad
    return inputs[0].tape._record(kind, inputs, out, backward_fn if requires_grad else None)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    # scalars broadcast everywhere; a length-d vector broadcasts over the rows of [n, d]
    if b in ((), (1,)):
        return a
    if a in ((), (1,)):
        return b
    if len(a) == 2 and len(b) == 1 and a[1] == b[0]:
        return a
    if len(b) == 2 and len(a) == 1 and b[1] == a[0]:
        return b
    raise DimensionError(f"incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if shape == (1,):
        return g.sum().reshape(1)
    return g.sum(axis=0)


def elementwise(kind: str, a, b) -> Tensor:
    """``add``, ``sub`` or ``mul`` with scalar and row broadcasting."""
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    if kind == "add":
        data = ad + bd

        def backward_fn(g):
            return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)
    elif kind == "sub":
        data = ad - bd

        def backward_fn(g):
            return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)
    elif kind == "mul":
        data = ad * bd
        need_a, need_b = a.requires_grad, b.requires_grad

        def backward_fn(g):
            return (_unbroadcast(g * bd, ad.shape) if need_a else None,
                    _unbroadcast(g * ad, bd.shape) if need_b else None)
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _result(kind, (a, b), data, backward_fn)


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def scale(t: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar without putting a constant on the tape."""
    c = float(c)
    return _result("scale", (t,), t.data * c, lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(g):
        return (g @ bd.T if need_a else None), (ad.T @ g if need_b else None)

    return _result("matmul", (a, b), ad @ bd, backward_fn)


def activation(kind: str, t: Tensor) -> Tensor:
    x = t.data
    if kind == "tanh":
        y = np.tanh(x)
        return _result(kind, (t,), y, lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        # split by sign so exp never overflows
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return _result(kind, (t,), y, lambda g: (g * y * (1.0 - y),))
    if kind == "relu":
        on = x > 0
        return _result(kind, (t,), np.where(on, x, 0.0), lambda g: (g * on,))
    if kind == "identity":
        return _result(kind, (t,), x.copy(), lambda g: (g,))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def tanh(t: Tensor) -> Tensor:
    return activation("tanh", t)


def sigmoid(t: Tensor) -> Tensor:
    return activation("sigmoid", t)


def relu(t: Tensor) -> Tensor:
    return activation("relu", t)


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.data)
    return _result("exp", (t,), y, lambda g: (g * y,))


def expm1(t: Tensor) -> Tensor:
    """exp(x) - 1, accurate near zero."""
    y = np.expm1(t.data)
    return _result("expm1", (t,), y, lambda g: (g * (y + 1.0),))


def reduce(kind: str, t: Tensor, axis: str = "all") -> Tensor:
    """Sum or mean over every element (``axis="all"``) or within each row.

    ``axis="rows"`` collapses each row of an ``[n, d]`` tensor to one value,
    giving shape ``[n]``.
    """
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    x = t.data
    shape = x.shape
    if axis == "all":
        count = x.size
        if kind == "mean" and count == 0:
            raise EmptyReductionError("mean over zero elements")
        data = np.asarray(x.sum())
        if kind == "mean":
            data = data / count
        factor = 1.0 if kind == "sum" else 1.0 / count

        def backward_fn(g):
            return (np.full(shape, float(g) * factor),)
    elif axis == "rows":
        if x.ndim != 2:
            raise DimensionError(f"row reduction needs a rank-2 tensor, got {shape}")
        count = shape[1]
        if kind == "mean" and count == 0:
            raise EmptyReductionError("mean over zero columns")
        data = x.sum(axis=1)
        if kind == "mean":
            data = data / count
        factor = 1.0 if kind == "sum" else 1.0 / count

        def backward_fn(g):
            return (np.repeat((g * factor)[:, None], count, axis=1),)
    else:
        raise ValueError(f"unknown axis {axis!r}; expected 'all' or 'rows'")
    return _result(kind, (t,), data, backward_fn)


def backward(loss: Tensor) -> None:
    loss.tape.backward(loss)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` at ``x`` with central differences.

    ``f`` receives a leaf tensor and must return a scalar tensor built on the
    same tape. Returns the maximum over coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    tape = Tape()
    leaf = tape.tensor(base.copy(), requires_grad=True)
    tape.backward(f(leaf))
    analytic = leaf.grad.ravel()

    def value_at(arr):
        return f(Tape().tensor(arr)).item()

    numeric = np.empty(base.size)
    for i in range(base.size):
        plus = base.copy()
        plus.flat[i] += eps
        minus = base.copy()
        minus.flat[i] -= eps
        numeric[i] = (value_at(plus) - value_at(minus)) / (2.0 * eps)
    if base.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
