"""Minimal dense reverse-mode differentiation over numpy arrays.

Only the primitives the model needs are provided. Shapes are checked
explicitly; the sole broadcasting allowed is a right operand whose shape
equals the trailing dimensions of the left one (biases, shared weights).
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Optional[Callable] = None, op: str = "leaf"):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def const(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient over leading axes so it matches ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if b.shape != a.shape and (b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "add")

    def back(g):
        return g, _sum_to(g, b.shape)
    return _result(a.data + b.data, (a, b), back, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "mul")

    def back(g):
        return g * b.data, _sum_to(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must match, or one operand must be 2-D and is then
    shared across the other's batch.
    """
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    if ok and a.ndim > 2 and b.ndim > 2:
        ok = a.shape[:-2] == b.shape[:-2]
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        ga = _sum_to(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _sum_to(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return _result(a.data @ b.data, (a, b), back, "matmul")


# ------------------------------------------------------------ shape plumbing

def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = list(ts)
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(ts)))
    return _result(np.concatenate([t.data for t in ts], axis=ax), ts, back, "concat")


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-advanced) indexing; the gradient scatters back in place."""
    out = a.data[key]

    def back(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)
    return _result(np.array(out), (a,), back, "slice")


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; output shape is ids.shape + (width,)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range for table of {table.shape[0]} rows")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (full,)
    return _result(table.data[ids], (table,), back, "take_rows")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


# --------------------------------------------------------------- nonlinearity

def relu(a: Tensor) -> Tensor:
    # relu'(0) = 0
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,),
                   lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax: a slice is fully masked")
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result(out.astype(a.data.dtype), (a,), back, "softmax")


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    if not train or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------------------ reductions

def sum_(a: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _result(np.asarray(a.data.sum(axis=axis)), (a,), back, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def max_(a: Tensor, axis: int = -1) -> Tensor:
    # ties route to the lowest index (np.argmax picks the first)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)
    return _result(np.squeeze(out, axis=axis), (a,), back, "max")


# --------------------------------------------------------------- convolution

def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Valid 1-D convolution.

    x: (N, C_in) or (B, N, C_in); w: (k, C_in, C_out). Output length N - k + 1.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if w.ndim != 3 or xd.ndim != 3 or xd.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    k, cin, cout = w.shape
    B, N, _ = xd.shape
    T = N - k + 1
    if T < 1:
        raise ShapeError(f"conv1d: input length {N} shorter than filter width {k}")
    cols = sliding_window_view(xd, k, axis=1)            # (B, T, C_in, k)
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B, T, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    out = cols @ wmat

    def back(g):
        g3 = g[None] if squeeze else g
        gw = None
        if w.requires_grad:
            gw = (cols.reshape(-1, k * cin).T @ g3.reshape(-1, cout)).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (g3 @ wmat.T).reshape(B, T, k, cin)
            gx = np.zeros_like(xd)
            for j in range(k):
                gx[:, j:j + T] += gcols[:, :, j]
            if squeeze:
                gx = gx[0]
        return gx, gw
    return _result(out[0] if squeeze else out, (x, w), back, "conv1d")


# ------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Each recorded node is visited exactly once, in reverse topological order.
    """
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node.parents:
            node.grad = None
    root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, root.data.dtype)
    for node in reversed(order):
        if not node.parents or node.grad is None:
            continue
        pgrads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, pgrads):
            if g is None or not p.requires_grad:
                continue
            g = np.asarray(g, dtype=p.data.dtype)
            p.grad = g if p.grad is None else p.grad + g


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
               max_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error per coordinate is |a - b| / max(1, |a|, |b|). With
    ``max_coords`` only a random subset of each tensor's coordinates is probed.
    """
    params = list(params)
    zero_grad(params)
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: objective is not finite")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: objective is not finite")
            num = (fp - fm) / (2 * eps)
            a = float(ga.reshape(-1)[i])
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
