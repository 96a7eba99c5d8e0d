"""Minimal reverse-mode autodiff over float64 numpy arrays.

Operations are recorded on the innermost active :class:`Tape`; calling
:meth:`Tape.gradient` replays the record backwards.  Only tensors flagged
``requires_grad`` (and values derived from them) are tracked, so frozen
parameters receive zero gradient for free.

Shapes follow numpy broadcasting rules, which is what lets every model
function accept an optional leading batch axis.
"""

from __future__ import annotations

import numbers
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "swish",
    "softplus",
    "softmax",
    "log_softmax",
    "sum_over_axis",
    "mean_over_axis",
    "reshape",
    "swapaxes",
    "getitem",
    "stack",
    "concat",
    "grad_check",
]


class NonFiniteError(FloatingPointError):
    """A loss or objective evaluated to NaN or Inf."""


class Tensor:
    """Immutable-by-convention float64 array with an autodiff flag.

    ``data`` is a C-contiguous ndarray (row-major flat storage plus a shape).
    The trainer is the only code allowed to replace ``data`` of a parameter,
    and only between forward passes.
    """

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_over_axis(self, axis, keepdims)

    def mean(self, axis: int):
        return mean_over_axis(self, axis)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (numbers.Number, np.ndarray, list, tuple)):
        return Tensor(x)
    raise TypeError(f"cannot use {type(x).__name__} as a Tensor operand")


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations.

    Usage::

        with Tape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)

    Creation order is already a topological order, so the backward pass is a
    plain reverse iteration.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._nodes.append((out, inputs, vjp))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. each source, shaped like it.

        Sources that do not influence the loss (or are frozen) get zeros.
        """
        if loss.size != 1:
            raise ValueError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def recording() -> bool:
    """True while any tape is active."""
    return bool(_TAPES)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    track = bool(_TAPES) and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        _TAPES[-1].record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim == 1 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        # row vector times matrix
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (b.shape[1],))
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError as exc:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def vjp(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _record(out, (a, b), vjp)


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def exp(x) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _wrap(x)
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only ever sees non-positive arguments
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out = _stable_sigmoid(x.data)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def _swish_derivative(x: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 + x * (1.0 - sig))


def swish(x) -> Tensor:
    """x * sigmoid(x), a.k.a. SiLU."""
    x = _wrap(x)
    xd = x.data
    sig = _stable_sigmoid(xd)
    return _record(xd * sig, (x,), lambda g: (g * _swish_derivative(xd, sig),))


def softplus(x) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    x = _wrap(x)
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    return _record(out, (x,), lambda g: (g * _stable_sigmoid(xd),))


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), vjp)


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------

def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"invalid axis {axis} for tensor of rank {ndim}")
    return axis % ndim


def sum_over_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    shape = x.shape
    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, int):
        axes = (_check_axis(axis, x.ndim),)
    else:
        axes = tuple(_check_axis(a, x.ndim) for a in axis)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _record(out, (x,), vjp)


def mean_over_axis(x, axis: int) -> Tensor:
    """Arithmetic mean along one axis; the result drops that axis."""
    x = _wrap(x)
    ax = _check_axis(axis, x.ndim)
    n = x.shape[ax]
    shape = x.shape
    out = x.data.mean(axis=ax)
    return _record(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, ax) / n, shape),))


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = _wrap(x)
    return _record(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(x, idx) -> Tensor:
    x = _wrap(x)
    shape = x.shape

    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(x.data[idx], (x,), vjp)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def vjp(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _record(out, ts, vjp)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, ts, vjp)


# --------------------------------------------------------------------------
# finite-difference check
# --------------------------------------------------------------------------

def grad_check(
    f: Callable[..., Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(*params)`` must return a scalar Tensor.  The relative error of each
    entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    params = [p if p.requires_grad else p.copy(requires_grad=True) for p in params]
    with Tape() as tape:
        loss = f(*params)
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"objective is not finite: {loss.data!r}")
    analytic = tape.gradient(loss, params)

    def evaluate(args) -> float:
        val = f(*args).item()
        if not np.isfinite(val):
            raise NonFiniteError("objective is not finite at a perturbed point")
        return val

    worst = 0.0
    for k, p in enumerate(params):
        base = p.data
        flat = base.reshape(-1)
        ga = analytic[k].reshape(-1)
        for j in range(flat.size):
            args = list(params)
            bumped = flat.copy()
            bumped[j] = flat[j] + h
            args[k] = Tensor(bumped.reshape(base.shape))
            f_plus = evaluate(args)
            bumped[j] = flat[j] - h
            args[k] = Tensor(bumped.reshape(base.shape))
            f_minus = evaluate(args)
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ga[j] - numeric) / max(1.0, abs(ga[j]), abs(numeric))
            worst = max(worst, err)
    return worst
