"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation appends one record to a thread-local tape.
``backward`` replays the tape once in reverse, accumulates gradients into
leaf tensors created with ``requires_grad=True``, and consumes the tape.
Gradients persist on leaves across backward calls (micro-batch accumulation)
until an optimizer step or ``zero_grad`` clears them.

Precision is selected globally: ``wide`` (float64) for verification work,
``narrow`` (float32) for training runs.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericalError, TapeError

_PRECISIONS = {"wide": np.dtype(np.float64), "narrow": np.dtype(np.float32)}
_active = {"mode": "wide"}


def set_precision(mode: str) -> None:
    """Select the global element precision: 'wide' (64-bit) or 'narrow' (32-bit)."""
    if mode not in _PRECISIONS:
        raise ValueError(f"unknown precision mode {mode!r}; expected 'wide' or 'narrow'")
    _active["mode"] = mode


def get_precision() -> str:
    return _active["mode"]


def active_dtype() -> np.dtype:
    return _PRECISIONS[_active["mode"]]


@contextmanager
def precision(mode: str):
    """Temporarily switch the global precision mode."""
    prev = _active["mode"]
    set_precision(mode)
    try:
        yield
    finally:
        _active["mode"] = prev


class TapeRecord:
    """One executed differentiable op: inputs, output, and its local backward."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


class _ThreadState(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True


_state = _ThreadState()


def tape() -> Tape:
    """The calling thread's tape."""
    return _state.tape


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording; forwards produce bit-identical values regardless."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _ensure_finite(arr: np.ndarray, op_name: str) -> None:
    # Fast path: NaN/Inf propagate into a full sum, so one reduction usually
    # settles it. A non-finite sum of finite values (magnitude overflow) is
    # re-checked precisely and allowed through.
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not bool(np.isfinite(arr).all()):
        raise NumericalError(f"{op_name} produced non-finite values")


class Tensor:
    """A dense real array plus optional gradient buffer.

    Treat ``data`` as immutable once produced; the optimizer rebinds it
    between steps rather than writing through it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=active_dtype())
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tracked = False

    @classmethod
    def _from_data(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tracked = False
        return t

    # -- introspection -------------------------------------------------
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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def to_numpy(self) -> np.ndarray:
        """A copy of the element buffer, safe for the caller to mutate."""
        return np.array(self.data, copy=True)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _should_track(*tensors: Tensor) -> bool:
    if not _state.grad_enabled:
        return False
    return any(t.requires_grad or t._tracked for t in tensors)


def _record(output: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
    _state.tape.records.append(TapeRecord(inputs, output, backward_fn))
    output._tracked = True


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic --------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data
    _ensure_finite(out_data, "add")
    out = Tensor._from_data(out_data)
    if _should_track(a, b):
        a_shape, b_shape = a.data.shape, b.data.shape

        def backward_fn(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        _record(out, (a, b), backward_fn)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data
    _ensure_finite(out_data, "sub")
    out = Tensor._from_data(out_data)
    if _should_track(a, b):
        a_shape, b_shape = a.data.shape, b.data.shape

        def backward_fn(g):
            return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

        _record(out, (a, b), backward_fn)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(over="ignore"):
        out_data = a.data * b.data
    _ensure_finite(out_data, "mul")
    out = Tensor._from_data(out_data)
    if _should_track(a, b):
        a_data, b_data = a.data, b.data

        def backward_fn(g):
            return (
                _unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape),
            )

        _record(out, (a, b), backward_fn)
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    _ensure_finite(out_data, "div")
    out = Tensor._from_data(out_data)
    if _should_track(a, b):
        a_data, b_data = a.data, b.data

        def backward_fn(g):
            ga = _unbroadcast(g / b_data, a_data.shape)
            gb = _unbroadcast(-g * a_data / (b_data * b_data), b_data.shape)
            return ga, gb

        _record(out, (a, b), backward_fn)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._from_data(-a.data)
    if _should_track(a):
        _record(out, (a,), lambda g: (-g,))
    return out


def scale(a, c: float) -> Tensor:
    """Multiply by a compile-time scalar (recorded with constant factor c)."""
    a = _as_tensor(a)
    c = float(c)
    out_data = a.data * c
    _ensure_finite(out_data, "scale")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        _record(out, (a,), lambda g: (g * c,))
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    _ensure_finite(out_data, "exp")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        def backward_fn(g):
            return (g * out_data,)

        _record(out, (a,), backward_fn)
    return out


# -- structure ----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from err
    out = Tensor._from_data(out_data)
    if _should_track(a):
        in_shape = a.data.shape

        def backward_fn(g):
            return (g.reshape(in_shape),)

        _record(out, (a,), backward_fn)
    return out


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid axes {axes} for tensor of rank {a.ndim}")
    out = Tensor._from_data(np.transpose(a.data, axes))
    if _should_track(a):
        inverse = tuple(np.argsort(axes))

        def backward_fn(g):
            return (np.transpose(g, inverse),)

        _record(out, (a,), backward_fn)
    return out


# -- reductions ----------------------------------------------------------

def mean(a) -> Tensor:
    """Mean over all elements (scalar output)."""
    a = _as_tensor(a)
    out_data = np.asarray(a.data.mean())
    _ensure_finite(out_data, "mean")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        in_shape = a.data.shape
        count = a.data.size

        def backward_fn(g):
            return (np.broadcast_to(g / count, in_shape).copy(),)

        _record(out, (a,), backward_fn)
    return out


def tensor_sum(a) -> Tensor:
    """Sum over all elements (scalar output)."""
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum())
    _ensure_finite(out_data, "sum")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        in_shape = a.data.shape

        def backward_fn(g):
            return (np.broadcast_to(g, in_shape).copy(),)

        _record(out, (a,), backward_fn)
    return out


def sum_last_axis(a, keepdims: bool = True) -> Tensor:
    """Sum along the last axis.

    The reduction runs independently within each trailing slice, so the
    result for a row depends only on that row's values.
    """
    a = _as_tensor(a)
    if a.ndim < 1:
        raise DimensionError("sum_last_axis requires rank >= 1")
    out_data = a.data.sum(axis=-1, keepdims=keepdims)
    _ensure_finite(out_data, "sum_last_axis")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        in_shape = a.data.shape

        def backward_fn(g):
            if not keepdims:
                g = np.expand_dims(g, -1)
            return (np.broadcast_to(g, in_shape).copy(),)

        _record(out, (a,), backward_fn)
    return out


def sorted_sum(a, axis: int, keepdims: bool = True) -> Tensor:
    """Sum along ``axis`` after sorting the addends.

    The summation order is a function of the value multiset only, so the
    result is bit-identical under any permutation of the reduced axis.
    """
    a = _as_tensor(a)
    if a.ndim == 0:
        raise DimensionError("sorted_sum requires rank >= 1")
    out_data = np.sort(a.data, axis=axis).sum(axis=axis, keepdims=keepdims)
    _ensure_finite(out_data, "sorted_sum")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        in_shape = a.data.shape
        norm_axis = axis % a.ndim

        def backward_fn(g):
            if not keepdims:
                g = np.expand_dims(g, norm_axis)
            return (np.broadcast_to(g, in_shape).copy(),)

        _record(out, (a,), backward_fn)
    return out


def axis_max(a, axis: int, keepdims: bool = True) -> Tensor:
    """Maximum along ``axis``.

    The forward value depends only on the value multiset of the reduced
    axis, so it is bit-identical under any permutation of that axis.  The
    gradient routes to the first occurrence of the maximum.
    """
    a = _as_tensor(a)
    if a.ndim == 0:
        raise DimensionError("axis_max requires rank >= 1")
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    _ensure_finite(out_data, "axis_max")
    out = Tensor._from_data(out_data)
    if _should_track(a):
        norm_axis = axis % a.ndim
        arg = np.expand_dims(a.data.argmax(axis=norm_axis), norm_axis)

        def backward_fn(g):
            if not keepdims:
                g = np.expand_dims(g, norm_axis)
            grad = np.zeros_like(a.data)
            np.put_along_axis(grad, arg, g, axis=norm_axis)
            return (grad,)

        _record(out, (a,), backward_fn)
    return out


# -- matmul ---------------------------------------------------------------

def _swap_last(arr: np.ndarray) -> np.ndarray:
    return np.swapaxes(arr, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product with standard leading-batch broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out_data = a.data @ b.data
    except ValueError as err:
        raise DimensionError(f"matmul batch shapes differ: {a.shape} @ {b.shape}") from err
    _ensure_finite(out_data, "matmul")
    out = Tensor._from_data(out_data)
    if _should_track(a, b):
        a_data, b_data = a.data, b.data

        def backward_fn(g):
            ga = _unbroadcast(g @ _swap_last(b_data), a_data.shape)
            gb = _unbroadcast(_swap_last(a_data) @ g, b_data.shape)
            return ga, gb

        _record(out, (a, b), backward_fn)
    return out


# -- backward ---------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate leaf gradients by replaying the thread's tape in reverse.

    The tape is consumed. Leaf gradients accumulate (+=) across calls.
    """
    if not isinstance(loss, Tensor):
        raise TapeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not _state.grad_enabled:
        raise TapeError("backward called while the tape is disabled")
    if loss.requires_grad and not loss._tracked:
        # Degenerate graph: the loss is itself a leaf parameter.
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        _state.tape.records.clear()
        return
    if not loss._tracked:
        raise TapeError("loss was not produced under an active tape")

    current = _state.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(current.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        input_grads = rec.backward_fn(g)
        for tensor, gi in zip(rec.inputs, input_grads):
            if gi is None:
                continue
            if tensor.requires_grad:
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad = tensor.grad + gi
            elif tensor._tracked:
                held = grads.get(id(tensor))
                grads[id(tensor)] = gi if held is None else held + gi
    current.records.clear()
