"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array. Primitive ops record nodes on a thread-local
tape whenever gradients are enabled and an input requires grad; backward()
replays the tape once in reverse order, accumulating gradients into leaf
tensors. Broadcasting is restricted to leading-dimension expansion (the
lower-rank operand's shape must be a suffix of the other's).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when input shapes are invalid for a primitive op."""


class ContractError(RuntimeError):
    """Raised on API contract violations (non-scalar loss, consumed tape, ...)."""


class Tensor:
    """Dense float64 array, optionally participating in the active tape."""

    __slots__ = ("values", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.node = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("kind", "inputs", "out", "backward_fn", "tape")

    def __init__(self, kind, inputs, out, backward_fn, tape):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tape = tape


class Tape:
    """Ordered record of primitive ops; consumed by one backward pass."""

    __slots__ = ("ops", "consumed")

    def __init__(self):
        self.ops: list[_Node] = []
        self.consumed = False


_STATE = threading.local()


def _active_tape() -> Tape:
    tape = getattr(_STATE, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _STATE.tape = tape
    return tape


def tape_length() -> int:
    """Number of ops recorded on the current tape (instrumentation)."""
    tape = getattr(_STATE, "tape", None)
    return 0 if tape is None or tape.consumed else len(tape.ops)


def reset_tape() -> None:
    _STATE.tape = None


def grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager disabling tape recording."""

    def __enter__(self):
        self._prev = grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def _record(kind: str, inputs: Sequence[Tensor], out: Tensor,
            backward_fn: Callable) -> Tensor:
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = _active_tape()
        node = _Node(kind, tuple(inputs), out, backward_fn, tape)
        out.node = node
        tape.ops.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of all requires_grad leaves reachable from `loss`.

    The active tape is walked in reverse exactly once and then consumed.
    Leaf gradients accumulate (+=) into .grad; call zero_grads between
    optimizer steps.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = getattr(_STATE, "tape", None)
    if loss.node is not None:
        if tape is None or loss.node.tape is not tape or tape.consumed:
            raise ContractError("loss was not produced on the active tape")
    elif not loss.requires_grad:
        raise ContractError("loss does not require grad (nothing to differentiate)")

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    keep: dict[int, Tensor] = {id(loss): loss}
    if tape is not None and not tape.consumed:
        for node in reversed(tape.ops):
            g = acc.pop(id(node.out), None)
            if g is None:
                if node.out.grad is None:
                    node.out.grad = np.zeros_like(node.out.values)
                continue
            node.out.grad = g
            keep.pop(id(node.out), None)
            in_grads = node.backward_fn(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None or not t.requires_grad:
                    continue
                prev = acc.get(id(t))
                if prev is None:
                    acc[id(t)] = ig.copy() if ig.base is not None or ig is g else ig
                    keep[id(t)] = t
                else:
                    prev += ig
        tape.consumed = True
        _STATE.tape = None
    # whatever remains belongs to leaves
    for tid, g in acc.items():
        t = keep[tid]
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.grad += g


def zero_grads(tensors) -> None:
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        else:
            t.grad[...] = 0.0


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over leading axes introduced by broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def _check_suffix(kind, a_shape, b_shape):
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if small != big[len(big) - len(small):]:
        raise DimensionError(f"{kind}: shapes {a_shape} and {b_shape} are not "
                             "leading-dim broadcastable")


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        out = Tensor(a.values + c)
        return _record("add", (a,), out, lambda g: (g,))
    if a.shape != b.shape:
        _check_suffix("add", a.shape, b.shape)
    out = Tensor(a.values + b.values)
    return _record("add", (a, b), out,
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        out = Tensor(a.values * c)
        return _record("mul", (a,), out, lambda g: (g * c,))
    if a.shape != b.shape:
        _check_suffix("mul", a.shape, b.shape)
    av, bv = a.values, b.values
    out = Tensor(av * bv)
    return _record("mul", (a, b), out,
                   lambda g: (_reduce_to(g * bv, a.shape), _reduce_to(g * av, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    out = Tensor(av @ bv)
    return _record("matmul", (a, b), out,
                   lambda g: (g @ bv.T, av.T @ g))


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a (V, d) table; ids may have any integer shape."""
    if table.values.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.values[ids])
    d = table.shape[1]

    def back(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _record("embedding_lookup", (table,), out, back)


def conv1d(x: Tensor, w: Tensor, width: int) -> Tensor:
    """Valid 1-d convolution over time.

    x: (T, d) or (B, T, d); w: (width*d, k) with rows laid out time-major
    (window flattened as [x_t; x_{t+1}; ...]). Output (T-width+1, k) or
    (B, T-width+1, k).
    """
    squeeze = x.values.ndim == 2
    xv = x.values[None] if squeeze else x.values
    if xv.ndim != 3:
        raise DimensionError(f"conv1d: input must be (T,d) or (B,T,d), got {x.shape}")
    b_, t_, d_ = xv.shape
    if t_ < width:
        raise DimensionError(f"conv1d: sequence length {t_} shorter than width {width}")
    if w.values.ndim != 2 or w.shape[0] != width * d_:
        raise DimensionError(f"conv1d: kernel shape {w.shape} does not match "
                             f"width {width} x dim {d_}")
    tw = t_ - width + 1
    # (B, T', width, d) -> (B, T', width*d)
    cols = np.lib.stride_tricks.sliding_window_view(xv, width, axis=1)
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(b_, tw, width * d_)
    outv = cols @ w.values
    out = Tensor(outv[0] if squeeze else outv)

    def back(g):
        g3 = g[None] if squeeze else g
        gw = cols.reshape(-1, width * d_).T @ g3.reshape(-1, w.shape[1])
        gcols = (g3 @ w.values.T).reshape(b_, tw, width, d_)
        gx = np.zeros((b_, t_, d_))
        for j in range(width):
            gx[:, j:j + tw, :] += gcols[:, :, j, :]
        return (gx[0] if squeeze else gx, gw)

    return _record("conv1d", (x, w), out, back)


def max_pool_over_time(x: Tensor) -> Tensor:
    """Max over the time axis: (T, k) -> (k,) or (B, T, k) -> (B, k).

    Ties route the gradient to the earliest time step.
    """
    nd = x.values.ndim
    if nd not in (2, 3):
        raise DimensionError(f"max_pool_over_time: input must be 2-d or 3-d, got {x.shape}")
    axis = nd - 2
    idx = np.argmax(x.values, axis=axis)
    out = Tensor(np.max(x.values, axis=axis))

    def back(g):
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _record("max_pool_over_time", (x,), out, back)


def max_pool_steps(steps: Sequence[Tensor]) -> Tensor:
    """Elementwise max over a list of same-shape tensors (time-major pooling)."""
    if not steps:
        raise DimensionError("max_pool_over_time: empty step list")
    vals = [t.values for t in steps]
    stacked = np.stack(vals)
    idx = np.argmax(stacked, axis=0)
    out = Tensor(stacked.max(axis=0))

    def back(g):
        return tuple(np.where(idx == i, g, 0.0) for i in range(len(steps)))

    return _record("max_pool_over_time", tuple(steps), out, back)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    out = Tensor(y)
    return _record("tanh", (x,), out, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.values)
    pos = x.values >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.values[pos]))
    ex = np.exp(x.values[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return _record("sigmoid", (x,), out, lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record("softmax", (x,), out, back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.values - x.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: empty input list")
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record("concat", tuple(tensors), out, back)


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.values.sum(axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.values.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.values.shape).copy(),)

    return _record("sum", (x,), out, back)


def tmean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.values.size if axis is None else x.values.shape[axis]
    out = Tensor(x.values.mean(axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.values.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.values.shape).copy(),)

    return _record("mean", (x,), out, back)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    nd = x.values.ndim
    if not (0 <= axis < nd):
        raise DimensionError(f"slice: axis {axis} out of range for shape {x.shape}")
    key = (slice(None),) * axis + (slice(start, stop),)
    out = Tensor(x.values[key])

    def back(g):
        gx = np.zeros_like(x.values)
        gx[key] = g
        return (gx,)

    return _record("slice", (x,), out, back)


def broadcast(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.values.shape != shape[len(shape) - x.values.ndim:]:
        raise DimensionError(f"broadcast: {x.shape} is not a suffix of {shape}")
    out = Tensor(np.broadcast_to(x.values, shape).copy())
    return _record("broadcast", (x,), out, lambda g: (_reduce_to(g, x.values.shape),))


_OPS = {
    "matmul": matmul,
    "embedding_lookup": embedding_lookup,
    "conv1d": conv1d,
    "max_pool_over_time": max_pool_over_time,
    "add": add,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "concat": concat,
    "mean": tmean,
    "sum": tsum,
    "slice": slice_axis,
    "broadcast": broadcast,
}


def forward_op(kind: str, inputs, **attrs) -> Tensor:
    """Dispatch a primitive by kind name (shape errors name the op)."""
    if kind not in _OPS:
        raise DimensionError(f"unknown op kind: {kind}")
    fn = _OPS[kind]
    if kind in ("concat",):
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6) -> dict:
    """Compare analytic grad of a scalar-valued f against central differences.

    Returns {"max_rel_err", "rel_err" (per coordinate), "passed"}. Raises
    ContractError if two forward runs of f disagree (non-deterministic f).
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    base = x.values.copy()

    with no_grad():
        y1 = f(Tensor(base)).values.copy()
        y2 = f(Tensor(base)).values.copy()
    if y1.size != 1:
        raise ContractError("grad_check: f must be scalar-valued")
    if not np.array_equal(y1, y2):
        raise ContractError("grad_check: f is not deterministic")

    xt = Tensor(base, requires_grad=True)
    loss = f(xt)
    backward(loss)
    analytic = xt.grad.copy()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(base)).values.reshape(()))
            flat[i] = orig - eps
            fm = float(f(Tensor(base)).values.reshape(()))
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    return {"max_rel_err": max_rel, "rel_err": rel, "passed": bool(max_rel <= tol),
            "analytic": analytic, "numeric": numeric}
