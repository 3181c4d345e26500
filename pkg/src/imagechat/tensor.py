"""Reverse-mode autodiff on numpy arrays.

Small tape-based tensor: every op records its parents and a backward
closure; `backward()` on a scalar topologically accumulates gradients.
All arrays must stay finite; a NaN/Inf result raises immediately rather
than propagating.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Input shapes do not conform to the op's contract."""


class NonFiniteError(FloatingPointError):
    """An op produced (or was given) NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value in tensor")


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        _check_finite(self.data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor.

        The tape is consumed: parent links are cleared afterwards.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is not None:
                for parent, pg in t._backward(g):
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        grads[id(parent)] = np.asarray(pg)
        for t in topo:
            t._parents = ()
            t._backward = None

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.data.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.data.dtype), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.data.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, dtype=np.float32):
    """Non-differentiable tensor wrapping a constant array."""
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    _check_finite(data)
    if _grad_enabled and any(_needs_grad(p) for p in parents):
        live = tuple(p for p in parents if isinstance(p, Tensor))
        return Tensor(data, _parents=live, _backward=backward)
    return Tensor(data)


def _needs_grad(t):
    return isinstance(t, Tensor) and (t.requires_grad or t._backward is not None)


# -- primitive ops -------------------------------------------------------

def add(a, b):
    out = a.data + b.data

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(out, (a, b), back)


def mul(a, b):
    out = a.data * b.data

    def back(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return _make(out, (a, b), back)


def div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def back(g):
        return ((a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data ** 2), b.shape)))

    return _make(out, (a, b), back)


def scale(a, c):
    c = float(c)
    out = a.data * c

    def back(g):
        return ((a, g * c),)

    return _make(out, (a,), back)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires >= 2-d operands; use dot for vectors")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _make(out, (a, b), back)


def dot(a, b):
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot requires equal-length 1-d vectors")
    out = np.dot(a.data, b.data)

    def back(g):
        return ((a, g * b.data), (b, g * a.data))

    return _make(out, (a, b), back)


def relu(a):
    out = np.maximum(a.data, 0)

    def back(g):
        return ((a, g * (a.data > 0)),)

    return _make(out, (a,), back)


def softmax_lastdim(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        gx = out * (g - (g * out).sum(axis=-1, keepdims=True))
        return ((a, gx),)

    return _make(out, (a,), back)


def log_softmax_lastdim(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def back(g):
        return ((a, g - sm * g.sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), back)


def layer_norm(a, eps=1e-5):
    """Normalize the last dim to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (a.data - mu) * inv

    def back(g):
        n = a.shape[-1]
        gx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - out * (g * out).mean(axis=-1, keepdims=True))
        del n
        return ((a, gx),)

    return _make(out, (a,), back)


def embedding_lookup(table, ids):
    if isinstance(ids, Tensor):
        raise ShapeError("ids must be an integer array, not a Tensor")
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding table must be 2-d")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding id out of range")
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, gt),)

    return _make(out, (table,), back)


def masked_mean_pool(a, mask):
    """Mean over axis -2, counting only positions where mask is 1.

    a: (..., L, H); mask: (..., L) of 0/1. Every row must have at least
    one active position.
    """
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.shape != a.shape[:-1]:
        raise ShapeError(f"mask shape {m.shape} does not match {a.shape[:-1]}")
    counts = m.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ShapeError("masked_mean_pool: a row has no active positions")
    out = (a.data * m[..., None]).sum(axis=-2) / counts

    def back(g):
        return ((a, g[..., None, :] * m[..., None] / counts[..., None]),)

    return _make(out, (a,), back)


def concat_lastdim(tensors):
    if not tensors:
        raise ShapeError("concat_lastdim: empty input list")
    out = np.concatenate([t.data for t in tensors], axis=-1)
    splits = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def back(g):
        parts = np.split(g, splits, axis=-1)
        return tuple(zip(tensors, parts))

    return _make(out, tuple(tensors), back)


def stack_axis0(tensors):
    out = np.stack([t.data for t in tensors], axis=0)

    def back(g):
        return tuple((t, g[i]) for i, t in enumerate(tensors))

    return _make(out, tuple(tensors), back)


def reshape(a, shape):
    shape = tuple(shape)
    out = a.data.reshape(shape)
    orig = a.shape

    def back(g):
        return ((a, g.reshape(orig)),)

    return _make(out, (a,), back)


def transpose(a, axes):
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return ((a, g.transpose(inverse)),)

    return _make(out, (a,), back)


def tsum(a):
    out = a.data.sum()

    def back(g):
        return ((a, np.full_like(a.data, g)),)

    return _make(out, (a,), back)


def tmean(a):
    n = a.data.size
    out = a.data.mean()

    def back(g):
        return ((a, np.full_like(a.data, g / n)),)

    return _make(out, (a,), back)


def sum_axis(a, axis):
    out = a.data.sum(axis=axis)

    def back(g):
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()),)

    return _make(out, (a,), back)


def mean_axis(a, axis):
    n = a.shape[axis]
    out = a.data.mean(axis=axis)

    def back(g):
        return ((a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy()),)

    return _make(out, (a,), back)


def select_index(a, axis, idx):
    """Slice out one index along an axis (dimension is dropped)."""
    out = np.take(a.data, idx, axis=axis)

    def back(g):
        ga = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = idx
        ga[tuple(sl)] = g
        return ((a, ga),)

    return _make(out, (a,), back)


def slice_axis(a, axis, start, stop):
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = a.data[sl]

    def back(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return ((a, ga),)

    return _make(out, (a,), back)


def gather(a, rows, cols):
    """Pick a[rows[i], cols[i]] from a 2-d tensor -> 1-d output."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if a.ndim != 2:
        raise ShapeError("gather requires a 2-d tensor")
    out = a.data[rows, cols]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return ((a, ga),)

    return _make(out, (a,), back)


def take_rows(a, idx):
    """Select rows of a 2-d tensor (differentiable index_select)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _make(out, (a,), back)


# -- spec-level dispatcher ------------------------------------------------

OP_KINDS = ("matmul", "add", "scale", "relu", "softmax_lastdim", "layer_norm",
            "embedding_lookup", "masked_mean_pool", "concat_lastdim", "dot")


def apply(op_kind, inputs):
    """Uniform entry point over the primitive op set.

    `inputs` is a list; scale takes [tensor, scalar], embedding_lookup
    takes [table, ids], masked_mean_pool takes [x, mask],
    concat_lastdim takes the list itself.
    """
    if op_kind == "matmul":
        return matmul(inputs[0], inputs[1])
    if op_kind == "add":
        return add(inputs[0], inputs[1])
    if op_kind == "scale":
        return scale(inputs[0], inputs[1])
    if op_kind == "relu":
        return relu(inputs[0])
    if op_kind == "softmax_lastdim":
        return softmax_lastdim(inputs[0])
    if op_kind == "layer_norm":
        return layer_norm(inputs[0])
    if op_kind == "embedding_lookup":
        return embedding_lookup(inputs[0], inputs[1])
    if op_kind == "masked_mean_pool":
        return masked_mean_pool(inputs[0], inputs[1])
    if op_kind == "concat_lastdim":
        return concat_lastdim(list(inputs))
    if op_kind == "dot":
        return dot(inputs[0], inputs[1])
    raise ValueError(f"unknown op kind: {op_kind}")
