"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray plus an optional gradient and the
closure that propagates incoming gradients to its parents.  Graphs are
built eagerly by the op functions below and released after ``backward``.
Every op validates that its output is finite; a NaN/Inf raises
FloatingPointError immediately rather than surfacing later as a silent
training collapse.

Only the ops the epidemic predictors need are provided; notably the
segment ops (sum / expand / detached max) that implement per-destination
softmax over edge lists for graph attention.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor", "concat", "take", "segment_sum", "expand_segments",
    "segment_max_const", "softmax_cross_entropy",
]


def _finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    return data


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """float64 array node in a reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- plumbing --------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free graph edges as we go so memory is released promptly
            node._parents = ()
            node._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, "add",
                       lambda a, b: a + b,
                       lambda a, b, out, g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub",
                       lambda a, b: a - b,
                       lambda a, b, out, g: (g, -g))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        return _binary(self, other, "mul",
                       lambda a, b: a * b,
                       lambda a, b, out, g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, "div",
                       lambda a, b: a / b,
                       lambda a, b, out, g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return _unary(self, "neg", lambda a: -a, lambda a, out, g: -g)

    def __matmul__(self, other):
        other = _as_tensor(other)
        out_data = _finite(self.data @ other.data, "matmul")
        out = Tensor(out_data)
        if self.requires_grad or other.requires_grad:
            out.requires_grad = True
            out._parents = (self, other)
            a, b = self, other

            def backward(g):
                if a.requires_grad:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                    a._accum(_sum_to_shape(ga, a.data.shape))
                if b.requires_grad:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                    b._accum(_sum_to_shape(gb, b.data.shape))

            out._backward = backward
        return out

    # -- pointwise nonlinearities ---------------------------------------
    def sigmoid(self):
        return _unary(self, "sigmoid", expit,
                      lambda a, out, g: g * out * (1.0 - out))

    def tanh(self):
        return _unary(self, "tanh", np.tanh,
                      lambda a, out, g: g * (1.0 - out * out))

    def exp(self):
        return _unary(self, "exp", np.exp, lambda a, out, g: g * out)

    def log(self):
        return _unary(self, "log", np.log, lambda a, out, g: g / a)

    def sqrt(self):
        return _unary(self, "sqrt", np.sqrt,
                      lambda a, out, g: g * 0.5 / out)

    def leaky_relu(self, slope: float = 0.2):
        return _unary(self, "leaky_relu",
                      lambda a: np.where(a > 0, a, slope * a),
                      lambda a, out, g: g * np.where(a > 0, 1.0, slope))

    def elu(self, alpha: float = 1.0):
        return _unary(self, "elu",
                      lambda a: np.where(a > 0, a, alpha * np.expm1(a)),
                      lambda a, out, g: g * np.where(a > 0, 1.0, out + alpha))

    # -- reductions and reshapes ----------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def fwd(x):
            return x.sum(axis=axis, keepdims=keepdims)

        def bwd(x, out, g):
            if axis is None:
                return np.broadcast_to(g, x.shape)
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, x.shape)

        return _unary(a, "sum", fwd, bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return _unary(a, "reshape",
                      lambda x: x.reshape(shape),
                      lambda x, out, g: g.reshape(x.shape))

    def swapaxes(self, ax1: int, ax2: int):
        return _unary(self, "swapaxes",
                      lambda x: np.swapaxes(x, ax1, ax2),
                      lambda x, out, g: np.swapaxes(g, ax1, ax2))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(a: Tensor, name: str, fwd, bwd) -> Tensor:
    out = Tensor(_finite(fwd(a.data), name))
    if a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._backward = lambda g: a._accum(
            _sum_to_shape(bwd(a.data, out.data, g), a.data.shape))
    return out


def _binary(a: Tensor, b, name: str, fwd, bwd) -> Tensor:
    b = _as_tensor(b)
    out = Tensor(_finite(fwd(a.data, b.data), name))
    if a.requires_grad or b.requires_grad:
        out.requires_grad = True
        out._parents = (a, b)

        def backward(g):
            ga, gb = bwd(a.data, b.data, out.data, g)
            if a.requires_grad:
                a._accum(_sum_to_shape(ga, a.data.shape))
            if b.requires_grad:
                b._accum(_sum_to_shape(gb, b.data.shape))

        out._backward = backward
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` with split-apart backward."""
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(_finite(np.concatenate([t.data for t in tensors], axis=axis),
                         "concat"))
    if any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._parents = tuple(tensors)
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accum(piece)

        out._backward = backward
    return out


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; backward scatter-adds into the source."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    n = a.data.shape[axis]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"take index out of range for axis of length {n}")
    out = Tensor(_finite(np.take(a.data, indices, axis=axis), "take"))
    if a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)

        def backward(g):
            ga = np.zeros_like(a.data)
            sel = (slice(None),) * axis + (indices,)
            np.add.at(ga, sel, g)
            a._accum(ga)

        out._backward = backward
    return out


def segment_sum(a: Tensor, seg_ptr: np.ndarray, axis: int = 1) -> Tensor:
    """Sum contiguous segments along ``axis``.

    ``seg_ptr`` has length S+1; segment s spans [seg_ptr[s], seg_ptr[s+1})
    and must be non-empty (np.add.reduceat misreads empty segments).
    """
    a = _as_tensor(a)
    starts = seg_ptr[:-1]
    lengths = np.diff(seg_ptr)
    out = Tensor(_finite(np.add.reduceat(a.data, starts, axis=axis),
                         "segment_sum"))
    if a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._backward = lambda g: a._accum(np.repeat(g, lengths, axis=axis))
    return out


def expand_segments(a: Tensor, seg_ptr: np.ndarray, axis: int = 1) -> Tensor:
    """Repeat each segment value out to its members (inverse of segment_sum)."""
    a = _as_tensor(a)
    starts = seg_ptr[:-1]
    lengths = np.diff(seg_ptr)
    out = Tensor(_finite(np.repeat(a.data, lengths, axis=axis),
                         "expand_segments"))
    if a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._backward = lambda g: a._accum(
            np.add.reduceat(g, starts, axis=axis))
    return out


def segment_max_const(a: Tensor, seg_ptr: np.ndarray, axis: int = 1) -> Tensor:
    """Per-segment max, detached from the graph.

    Used as the stabilizing shift inside segment softmax; the shift
    cancels analytically, so treating it as a constant keeps gradients
    exact while avoiding a non-smooth max backward.
    """
    a = _as_tensor(a)
    return Tensor(np.maximum.reduceat(a.data, seg_ptr[:-1], axis=axis))


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over rows of ``logits`` [n, C] with int labels [n].

    Returns (scalar loss tensor, detached softmax probabilities).  Fused
    log-sum-exp forward and (p - onehot)/n backward.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    x = logits.data
    if x.ndim != 2:
        raise ValueError("logits must be 2-D [n, C]")
    n, C = x.shape
    if labels.shape[0] != n:
        raise ValueError("labels length must match logits rows")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range for {C} classes")
    m = x.max(axis=1, keepdims=True)
    z = x - m
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    probs = ez / denom
    log_p = z - np.log(denom)
    loss_val = -log_p[np.arange(n), labels].mean() if n else 0.0
    out = Tensor(_finite(np.asarray(loss_val), "softmax_cross_entropy"))
    if logits.requires_grad:
        out.requires_grad = True
        out._parents = (logits,)

        def backward(g):
            gl = probs.copy()
            gl[np.arange(n), labels] -= 1.0
            logits._accum(gl * (float(g) / n))

        out._backward = backward
    return out, probs
