"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations are recorded on a per-thread tape in execution order. ``backward``
replays the tape in reverse, accumulating gradients into ``Tensor.grad`` for
every reachable tensor that requires them, then clears the tape.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> backward(sum_(x * x))
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, KinkError, NumericError, StaleTapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


class _Node:
    __slots__ = ("op", "inputs", "output", "backward", "epoch")

    def __init__(self, op, inputs, output, backward, epoch):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.epoch = epoch


class Tape:
    """Ordered record of differentiable operations for one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.epoch = 0
        self.enabled = True

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes = []
        self.epoch += 1


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def no_grad():
    """Disable recording; used for evaluation passes."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    """Dense float64 array with optional gradient buffer."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = get_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(op, tuple(inputs), out, backward_fn, tape.epoch)
        tape.nodes.append(node)
        out._node = node
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data**p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record("power", out, (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        return (g / (2.0 * out),)

    return _record("sqrt", out, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)

    # relu'(0) = 0
    def bw(g):
        return (g * (a.data > 0),)

    return _record("relu", np.maximum(a.data, 0.0), (a,), bw)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU, with its exact derivative."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_K * x**3))

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_K * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du),)

    return _record("gelu", 0.5 * x * (1.0 + t), (a,), bw)


def broadcast(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None

    def bw(g):
        return (_unbroadcast(g, a.shape),)

    return _record("broadcast", out, (a,), bw)


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not compatible") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _record("matmul", out, (a, b), bw)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose: need at least 2 dims, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _record("transpose", np.transpose(a.data, axes).copy(), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _record("reshape", out.copy(), (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat: shapes {shapes} are not compatible on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tensors, bw)


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64, ndmin=1)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g.reshape(a.data[index].shape))
        return (full,)

    return _record("slice", out, (a,), bw)


# ---------------------------------------------------------------- reductions


def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.full(a.shape, float(g.reshape(-1)[0])),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record("sum", np.atleast_1d(out), (a,), bw)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- row-wise


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. ``mask`` (broadcastable, True = keep)
    excludes entries; every row must keep at least one entry."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _record("softmax-rows", y, (a,), bw)


def layernorm_rows(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization over the last axis (no affine)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _record("layernorm-rows", xhat, (a,), bw)


# ---------------------------------------------------------------- dispatch

OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": slice_,
    "softmax-rows": softmax_rows,
    "layernorm-rows": layernorm_rows,
    "gelu": gelu,
    "relu": relu,
    "sum": sum_,
    "mean": mean,
    "power": power,
    "sqrt": sqrt,
    "broadcast": broadcast,
}


def forward_op(name: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply op ``name`` to ``inputs``. ``finite=True`` rejects NaN/Inf inputs."""
    try:
        fn = OPS[name]
    except KeyError:
        raise ContractError(f"unknown op {name!r}") from None
    inputs = [as_tensor(t) for t in inputs]
    if attrs.pop("finite", False):
        for t in inputs:
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"{name}: non-finite input of shape {t.shape}")
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if not isinstance(loss, Tensor) or loss.shape != (1,):
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar tensor of shape (1,), got {shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that does not require grad")
    tape = get_tape()
    node = loss._node
    if node is None:
        # loss is itself a leaf
        loss.grad = np.ones(1) if loss.grad is None else loss.grad + 1.0
        return
    if node.epoch != tape.epoch:
        raise StaleTapeError("tape already consumed; run a new forward pass before backward")

    pending = {id(loss): np.ones(1)}
    for n in reversed(tape.nodes):
        g = pending.pop(id(n.output), None)
        if g is None:
            continue
        n.output.grad = g
        for inp, gi in zip(n.inputs, n.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is not None and inp._node.epoch == tape.epoch:
                key = id(inp)
                pending[key] = pending[key] + gi if key in pending else gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
    tape.clear()


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    floor: float = 1e-7,
    max_shifts: int = 5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Coordinates where both gradients are below ``floor`` in magnitude are
    compared by absolute error (0/0 counts as 0). If a coordinate sits on a
    kink, ``x`` is shifted off it by a few ``eps`` and the check restarts;
    after ``max_shifts`` attempts a KinkError names the coordinates.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)

    def value(arr):
        with no_grad():
            out = f(Tensor(arr))
        if not isinstance(out, Tensor) or out.shape != (1,):
            raise ContractError("finite_difference_check: f must return a scalar tensor")
        return float(out.data[0])

    for _ in range(max_shifts + 1):
        xt = Tensor(x0.copy(), requires_grad=True)
        out = f(xt)
        if not isinstance(out, Tensor) or out.shape != (1,):
            raise ContractError("finite_difference_check: f must return a scalar tensor")
        if out.requires_grad:
            backward(out)
        analytic = np.zeros_like(x0) if xt.grad is None else xt.grad.reshape(x0.shape)

        f0 = value(x0)
        numeric = np.zeros_like(x0)
        kinks = []
        flat = x0.reshape(-1)
        for i in range(flat.size):
            fp, fm = _bump(value, x0, i, eps), _bump(value, x0, i, -eps)
            numeric.flat[i] = (fp - fm) / (2.0 * eps)
            mismatch = abs((fp - f0) - (f0 - fm)) / eps
            if mismatch > 1e-3 * max(1.0, abs(numeric.flat[i])):
                e2 = eps / 10.0
                fp2, fm2 = _bump(value, x0, i, e2), _bump(value, x0, i, -e2)
                if abs((fp2 - f0) - (f0 - fm2)) / e2 > 0.5 * mismatch:
                    kinks.append(i)
        if not kinks:
            a, n = analytic.reshape(-1), numeric.reshape(-1)
            denom = np.maximum(np.abs(a), np.abs(n))
            diff = np.abs(a - n)
            rel = np.where(denom < floor, diff, diff / np.where(denom == 0.0, 1.0, denom))
            return float(rel.max()) if rel.size else 0.0
        for i in kinks:
            x0.flat[i] += 7.0 * eps
    raise KinkError(f"coordinates {kinks} sit on a non-differentiable point", kinks)


def _bump(value, x0, i, h):
    xp = x0.copy()
    xp.flat[i] += h
    return value(xp)


def checksum(arrays) -> str:
    """sha256 over the raw bytes of a sequence of arrays/tensors."""
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        arr = a.data if isinstance(a, Tensor) else np.asarray(a)
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()
