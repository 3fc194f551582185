"""Minimal reverse-mode autodiff over dense float64 tensors, plus Adam.

Operations are recorded on the active :class:`Tape` (entered with ``with``)
whenever at least one input requires a gradient. Outside a tape nothing is
recorded and outputs never require gradients, which is what finite
difference checks and inference want.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class UnknownPrimitiveError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class TapeEntry:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    saved: Any
    attrs: dict


@dataclass
class Tape:
    entries: list[TapeEntry] = field(default_factory=list)
    consumed: bool = False

    def record(self, entry: TapeEntry) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


# ---------------------------------------------------------------------------
# primitives


class Primitive(NamedTuple):
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., tuple[np.ndarray | None, ...]]


PRIMITIVES: dict[str, Primitive] = {}


def _register(kind: str, fwd, bwd) -> None:
    PRIMITIVES[kind] = Primitive(fwd, bwd)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _add_fwd(a, b):
    _broadcast_check("add", a, b)
    return a + b, None


def _add_bwd(g, saved, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a, b):
    _broadcast_check("sub", a, b)
    return a - b, None


def _sub_bwd(g, saved, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_fwd(a, b):
    _broadcast_check("mul", a, b)
    return a * b, None


def _mul_bwd(g, saved, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _matmul_fwd(a, b):
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b, None


def _matmul_bwd(g, saved, a, b):
    ga = g @ b.T
    gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
    return ga, gb


def _concat_fwd(*arrays, axis=-1):
    ref = arrays[0]
    ax = axis % ref.ndim
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
            arr.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {arr.shape} along axis {axis}")
    sizes = [arr.shape[ax] for arr in arrays]
    return np.concatenate(arrays, axis=ax), (ax, sizes)


def _concat_bwd(g, saved, *arrays, axis=-1):
    ax, sizes = saved
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=ax))


def _slice_fwd(a, axis=-1, start=0, stop=None):
    ax = axis % a.ndim
    n = a.shape[ax]
    stop = n if stop is None else stop
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for shape {a.shape} on axis {axis}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    return a[tuple(index)], tuple(index)


def _slice_bwd(g, saved, a, **attrs):
    out = np.zeros_like(a)
    out[saved] = g
    return (out,)


def _reshape_fwd(a, shape=()):
    try:
        return a.reshape(shape), None
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None


def _reshape_bwd(g, saved, a, **attrs):
    return (g.reshape(a.shape),)


def _pad_fwd(a, axis=-1, before=0, after=0):
    if before < 0 or after < 0:
        raise ShapeError(f"pad: negative padding ({before}, {after}) for shape {a.shape}")
    ax = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[ax] = (before, after)
    index = [slice(None)] * a.ndim
    index[ax] = slice(before, before + a.shape[ax])
    return np.pad(a, widths), tuple(index)


def _pad_bwd(g, saved, a, **attrs):
    return (g[saved],)


def _relu_fwd(a):
    return np.maximum(a, 0.0), None


def _relu_bwd(g, saved, a):
    return (g * (a > 0),)


def _sigmoid_fwd(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a))
    return out, out


def _sigmoid_bwd(g, s, a):
    return (g * s * (1.0 - s),)


def _tanh_fwd(a):
    out = np.tanh(a)
    return out, out


def _tanh_bwd(g, t, a):
    return (g * (1.0 - t * t),)


def _softmax_fwd(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def _softmax_bwd(g, s, a):
    return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def _log_fwd(a):
    if np.any(a <= 0):
        raise FloatingPointError("log: non-positive input")
    return np.log(a), None


def _log_bwd(g, saved, a):
    return (g / a,)


def _clamp_fwd(a, lo=-np.inf, hi=np.inf):
    return np.clip(a, lo, hi), None


def _clamp_bwd(g, saved, a, lo=-np.inf, hi=np.inf):
    return (g * ((a >= lo) & (a <= hi)),)


def _max_fwd(a, axis=-1):
    ax = axis % a.ndim
    if a.shape[ax] == 0:
        raise ShapeError(f"max: empty axis {axis} in shape {a.shape}")
    # argmax returns the first occurrence on ties; gradient routes there only
    idx = np.argmax(a, axis=ax)
    out = np.take_along_axis(a, np.expand_dims(idx, ax), axis=ax).squeeze(ax)
    return out, (ax, idx)


def _max_bwd(g, saved, a, **attrs):
    ax, idx = saved
    out = np.zeros_like(a)
    np.put_along_axis(out, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
    return (out,)


def _sum_fwd(a, axis=None):
    if axis is None:
        return np.array([a.sum()]), None
    return a.sum(axis=axis), None


def _sum_bwd(g, saved, a, axis=None):
    if axis is None:
        return (np.full_like(a, g.reshape(-1)[0]),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _embedding_fwd(table, ids=None):
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {table.shape[0]})")
    return table[ids], ids


def _embedding_bwd(g, saved, table, **attrs):
    out = np.zeros_like(table)
    np.add.at(out, saved.reshape(-1), g.reshape(-1, table.shape[1]))
    return (out,)


for _kind, _f, _b in [
    ("add", _add_fwd, _add_bwd),
    ("sub", _sub_fwd, _sub_bwd),
    ("mul", _mul_fwd, _mul_bwd),
    ("matmul", _matmul_fwd, _matmul_bwd),
    ("concat", _concat_fwd, _concat_bwd),
    ("slice", _slice_fwd, _slice_bwd),
    ("reshape", _reshape_fwd, _reshape_bwd),
    ("pad", _pad_fwd, _pad_bwd),
    ("relu", _relu_fwd, _relu_bwd),
    ("sigmoid", _sigmoid_fwd, _sigmoid_bwd),
    ("tanh", _tanh_fwd, _tanh_bwd),
    ("softmax", _softmax_fwd, _softmax_bwd),
    ("log", _log_fwd, _log_bwd),
    ("clamp", _clamp_fwd, _clamp_bwd),
    ("max", _max_fwd, _max_bwd),
    ("sum", _sum_fwd, _sum_bwd),
    ("embedding", _embedding_fwd, _embedding_bwd),
]:
    _register(_kind, _f, _b)


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Run primitive ``kind`` on ``inputs`` and record it if any input needs a gradient."""
    prim = PRIMITIVES.get(kind)
    if prim is None:
        raise UnknownPrimitiveError(f"unknown primitive {kind!r}")
    tensors = tuple(as_tensor(x) for x in inputs)
    out, saved = prim.forward(*(t.data for t in tensors), **attrs)
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in tensors)
    result = Tensor._wrap(np.asarray(out, dtype=np.float64), needs_grad)
    if needs_grad:
        tape.record(TapeEntry(kind, tensors, result, saved, attrs))
    return result


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("backward: tape already consumed")
    tape.consumed = True
    produced = {id(e.output) for e in tape.entries}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        prim = PRIMITIVES[entry.kind]
        in_grads = prim.backward(g, entry.saved, *(t.data for t in entry.inputs), **entry.attrs)
        for t, gi in zip(entry.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in produced:
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
    tape.entries.clear()


# convenience wrappers


def add(a, b) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a, b) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a, b) -> Tensor:
    return apply_primitive("mul", [a, b])


def matmul(a, b) -> Tensor:
    return apply_primitive("matmul", [a, b])


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return apply_primitive("concat", tensors, axis=axis)


def slice_axis(a, start: int, stop: int, axis: int = -1) -> Tensor:
    return apply_primitive("slice", [a], axis=axis, start=start, stop=stop)


def reshape(a, shape) -> Tensor:
    return apply_primitive("reshape", [a], shape=tuple(shape))


def pad(a, before: int, after: int, axis: int = -1) -> Tensor:
    return apply_primitive("pad", [a], axis=axis, before=before, after=after)


def relu(a) -> Tensor:
    return apply_primitive("relu", [a])


def sigmoid(a) -> Tensor:
    return apply_primitive("sigmoid", [a])


def tanh(a) -> Tensor:
    return apply_primitive("tanh", [a])


def softmax(a) -> Tensor:
    return apply_primitive("softmax", [a])


def log(a) -> Tensor:
    return apply_primitive("log", [a])


def clamp(a, lo: float, hi: float) -> Tensor:
    return apply_primitive("clamp", [a], lo=lo, hi=hi)


def max_axis(a, axis: int = -1) -> Tensor:
    return apply_primitive("max", [a], axis=axis)


def sum_all(a) -> Tensor:
    return apply_primitive("sum", [a])


def embedding(table, ids) -> Tensor:
    return apply_primitive("embedding", [table], ids=np.asarray(ids, dtype=np.int64))


# ---------------------------------------------------------------------------
# numeric oracle


def finite_difference_grad(f: Callable[[Tensor], Any], x: Tensor, epsilon: float = 1e-5,
                           indices: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x``.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the result are left at zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    flat = x.data.reshape(-1)
    out = np.zeros(flat.size)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = _scalar(f(x))
        flat[i] = orig - epsilon
        lo = _scalar(f(x))
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value while probing index {i}")
        out[i] = (hi - lo) / (2.0 * epsilon)
    return out.reshape(x.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """||a - b|| / max(||a|| + ||b||, floor)."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a) + np.linalg.norm(b)), floor)
    return num / den


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Gradients are left untouched."""
    if len(params) != len(state.m):
        raise ShapeError(f"adam: {len(params)} params but state holds {len(state.m)}")
    for p, m in zip(params, state.m):
        if p.grad is None:
            raise ValueError(f"adam: parameter {p.name or p.shape} has no gradient")
        if m.shape != p.shape:
            raise ShapeError(f"adam: state shape {m.shape} does not match parameter {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    bc2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= step * m / (np.sqrt(v / bc2) + state.epsilon)
