"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major numpy array. While a
:class:`GradientTape` is active, every differentiable operation appends a
record holding its input/output tensors and a closure that maps the output
gradient to input gradients. Records are appended in execution order, so
replaying the tape back to front visits operations in exact reverse
topological order of the forward pass.

Training runs in float32; float64 exists for gradient checking, where
central finite differences need the extra headroom.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ShapeError, UsageError, ConfigError
from .rng import Rng

DEFAULT_DTYPE = np.float32

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """n-dimensional real array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _ALLOWED_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def constant(data, dtype=None) -> Tensor:
    """Tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_TAPE_STACKS = threading.local()


def _active_tapes() -> list["GradientTape"]:
    stack = getattr(_TAPE_STACKS, "tapes", None)
    if stack is None:
        stack = _TAPE_STACKS.tapes = []
    return stack


class GradientTape:
    """Ordered record of executed operations, consumed once by backward().

    One tape is single-threaded; independent tapes on different threads
    record independently.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "GradientTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tapes().remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def _append(self, record: _Record) -> None:
        self._records.append(record)

    def reset(self) -> None:
        """Drop all records and clear gradients on every tensor touched."""
        for rec in self._records:
            rec.output.grad = None
            for t in rec.inputs:
                t.grad = None
        self._records.clear()


def record_op(op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> Tensor:
    """Register a custom differentiable operation on the active tape.

    `backward_fn(grad_out)` must return one gradient array (or None) per
    input, in input order.
    """
    output.requires_grad = any(t.requires_grad for t in inputs)
    if output.requires_grad:
        stack = _active_tapes()
        if stack:
            stack[-1]._append(_Record(op, inputs, output, backward_fn))
    return output


def backward(loss: Tensor, tape: GradientTape) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every tensor on the tape.

    The loss must be a scalar; its seed gradient is 1. Tensors not on any
    path to the loss keep grad=None.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape._records):
        g_out = rec.output.grad
        if g_out is None:
            continue
        grads_in = rec.backward_fn(g_out)
        for t, g in zip(rec.inputs, grads_in):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.data.shape:
                raise ShapeError(
                    f"{rec.op} backward produced gradient {g.shape} for input {t.data.shape}"
                )
            if t.grad is None:
                t.grad = g.astype(t.data.dtype, copy=True)
            else:
                t.grad += g


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise UsageError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-d operands or stacked batches with equal leading dims."""
    _check_same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return record_op("matmul", (a, b), out, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: y[..., o] = sum_i x[..., i] * w[o, i] (+ b[o])."""
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    _check_same_dtype("linear", *([x, w] + ([b] if b is not None else [])))
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(-1, w.shape[0])
        x2 = x.data.reshape(-1, w.shape[1])
        gx = (g2 @ w.data).reshape(x.data.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return record_op("linear", inputs, out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equally shaped tensors."""
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g, g

    return record_op("add", (a, b), out, bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    f = x.data.dtype.type(factor)
    out = Tensor(x.data * f)

    def bwd(g):
        return (g * f,)

    return record_op("scale", (x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def bwd(g):
        return (g * (x.data > 0),)

    return record_op("relu", (x,), out, bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along `axis`, stabilized by max subtraction."""
    _check_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return record_op("softmax", (x,), out, bwd)


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization along `axis` (no affine).

    Population variance; eps keeps the zero-variance slice finite.
    """
    _check_axis(x, axis)
    if x.shape[axis] < 1:
        raise ShapeError(f"layer_norm axis {axis} is empty in shape {x.shape}")
    mu = np.mean(x.data, axis=axis, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    y = (x.data - mu) * inv
    out = Tensor(y)

    def bwd(g):
        gm = np.mean(g, axis=axis, keepdims=True)
        gy = np.mean(g * y, axis=axis, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return record_op("layer_norm", (x,), out, bwd)


def mean(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along one axis (axis removed)."""
    _check_axis(x, axis)
    n = x.shape[axis]
    out = Tensor(np.mean(x.data, axis=axis))

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return record_op("mean", (x,), out, bwd)


def tensor_sum(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over all elements when axis is None."""
    if axis is None:
        out = Tensor(np.sum(x.data))

        def bwd(g):
            return (np.broadcast_to(g, x.data.shape).copy(),)

    else:
        _check_axis(x, axis)
        out = Tensor(np.sum(x.data, axis=axis))
        n = x.shape[axis]

        def bwd(g):
            return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return record_op("sum", (x,), out, bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: Rng | None = None) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Identity in eval mode or at rate 0; neither consumes randomness.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = ~rng.bernoulli(x.shape, rate)
    m = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    out = Tensor(x.data * m)

    def bwd(g):
        return (g * m,)

    return record_op("dropout", (x,), out, bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return record_op("reshape", (x,), out, bwd)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inverse),)

    return record_op("transpose", (x,), out, bwd)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather the given indices along `axis`; duplicates allowed."""
    _check_axis(x, axis)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take needs a flat index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise ShapeError(f"take indices out of range for axis {axis} of shape {x.shape}")
    out = Tensor(np.take(x.data, idx, axis=axis))

    def bwd(g):
        gx = np.zeros_like(x.data)
        loc = (slice(None),) * axis + (idx,)
        np.add.at(gx, loc, g)
        return (gx,)

    return record_op("take", (x,), out, bwd)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    if not tensors:
        raise UsageError("stack needs at least one tensor")
    _check_same_dtype("stack", *tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) > 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bwd(g):
        pieces = np.moveaxis(g, axis, 0)
        return tuple(pieces[i] for i in range(len(tensors)))

    return record_op("stack", tuple(tensors), out, bwd)


def _check_axis(x: Tensor, axis: int) -> None:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")


def dump(t: Tensor) -> str:
    """Debug text form: shape line, then row-major values at 9 significant digits."""
    lines = [" ".join(str(d) for d in t.shape)]
    flat = np.ravel(t.data, order="C")
    width = t.shape[-1] if t.ndim >= 1 and t.shape[-1] > 0 else 1
    for start in range(0, flat.size, width):
        row = flat[start:start + width]
        lines.append(" ".join(format(float(v), ".9g") for v in row))
    return "\n".join(lines) + "\n"
