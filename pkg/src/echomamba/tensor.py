"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a node to the active :class:`Tape` when at
least one input requires a gradient.  :func:`backward` replays the tape in
exact reverse order.  Values live in numpy arrays of the globally selected
precision (float32 for training, float64 for verification).
"""
from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComplexTensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "set_precision",
    "get_dtype",
    "precision",
    "set_debug",
    "no_grad",
    "tensor",
    "parameter",
    "backward",
    "current_tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "sigmoid",
    "silu",
    "softplus",
    "elementwise",
    "reduce",
    "concat",
    "reshape",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf while debug checks were on."""


_DTYPES = {32: np.float32, 64: np.float64}
_state = threading.local()
_global = {"dtype": np.float32, "debug": os.environ.get("ECHOMAMBA_DEBUG", "") not in ("", "0")}


def set_precision(bits: int) -> None:
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _global["dtype"] = _DTYPES[bits]


def get_dtype() -> type:
    return _global["dtype"]


@contextlib.contextmanager
def precision(bits: int):
    old = _global["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _global["dtype"] = old


def set_debug(flag: bool) -> None:
    """Toggle the NaN/Inf assertion run after every forward op."""
    _global["debug"] = bool(flag)


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def record(self, node: "_Node") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class _Node:
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    old = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


class Tensor:
    """A dense array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_is_leaf")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or arr.dtype != get_dtype():
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class ComplexTensor:
    """Complex array stored as separate real and imaginary tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"real {self.real.shape} and imag {self.imag.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data

    @classmethod
    def from_numpy(cls, z: np.ndarray, requires_grad: bool = False) -> "ComplexTensor":
        return cls(Tensor(z.real, requires_grad), Tensor(z.imag, requires_grad))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward_fn, name: str,
            check_finite: bool = True) -> Tensor:
    """Wrap a forward result and, when needed, record its backward rule."""
    if data.dtype != get_dtype():
        data = data.astype(get_dtype())
    if check_finite and _global["debug"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {name}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._is_leaf = False
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        current_tape().record(_Node(out, tuple(inputs), backward_fn, name))
    return out


def backward(loss: Tensor, tape: Tape | None = None, retain: bool = False) -> None:
    """Populate ``.grad`` on every leaf that requires it.

    Leaf gradients accumulate across calls; intermediate gradients are
    discarded.  The tape is cleared unless ``retain`` is set.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape() if tape is None else tape
    if not len(tape):
        raise ValueError("backward called on an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{node.name}: gradient shape {gi.shape} != input shape {t.shape}")
            if t._is_leaf:
                t.grad = gi.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + gi
            else:
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi
    if not retain:
        tape.clear()


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after trailing-dimension broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_op(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return make_op(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
                   "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return make_op(out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape),
                              unbroadcast(-g * out / b.data, b.shape)),
                   "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return make_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return make_op(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    return make_op(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "exp": exp, "sigmoid": sigmoid, "silu": silu, "softplus": softplus,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return make_op(a.data @ b.data, (a, b), bw, "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def reduce(op: str, t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    axes = _norm_axis(axis, t.ndim)
    if op == "sum":
        out = t.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = t.data.mean(axis=axes, keepdims=keepdims)
        scale = 1.0 / max(1, int(np.prod([t.shape[a] for a in axes])))
    else:
        raise ValueError(f"unknown reduction {op!r}")

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, t.shape).copy(),)

    return make_op(np.asarray(out), (t,), bw, op)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    return make_op(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.shape),), "reshape")


def index(t, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    t = _as_tensor(t)

    def bw(g):
        out = np.zeros_like(t.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_op(np.asarray(t.data[idx]), (t,), bw, "index")


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(x) for x in ts]
    data = np.concatenate([x.data for x in ts], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(data, tuple(ts), bw, "concat")


def split(t: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != t.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {t.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        sl = [slice(None)] * t.ndim
        sl[axis] = slice(start, start + n)
        out.append(index(t, tuple(sl)))
        start += n
    return out
