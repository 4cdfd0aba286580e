"""Reverse-mode autodiff on n-dimensional float arrays.

A Tensor wraps a numpy array plus an optional gradient buffer and a record of
the op that produced it. Ops build a DAG of closures; Tensor.backward walks
it in reverse topological order, accumulating into .grad. Every op output and
every gradient is checked for NaN/Inf before it can propagate.

float32 is the working precision for training; the ops are dtype-generic so
tests can run gradient checks in float64.
"""

from contextlib import contextmanager

import numpy as np

from .errors import (
    InvalidRate,
    NonScalarLoss,
    NumericalError,
    ShapeMismatch,
)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def assert_finite(arr: np.ndarray, what: str) -> None:
    # A float64-accumulated sum is NaN or +-Inf iff the array contains one;
    # this is a single SIMD pass instead of a full isfinite scan.
    if arr.size and not np.isfinite(arr.sum(dtype=np.float64)):
        raise NumericalError(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, op, backward):
        assert_finite(data, f"output of {op}")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    def _accum(self, g, owned=False):
        # owned=True promises g is freshly allocated and nobody else holds
        # it, so it can be adopted as the grad buffer without copying.
        if self.grad is None:
            if g.dtype != self.data.dtype:
                self.grad = g.astype(self.data.dtype)
            elif owned:
                self.grad = g
            else:
                self.grad = g.copy()
        else:
            self.grad += g

    # -- backward -------------------------------------------------------------

    def backward(self, free_graph=True):
        """Populate .grad on every reachable requires_grad tensor.

        The loss must be scalar. Intermediate grads and graph edges are
        released as the walk proceeds unless free_graph is False.
        """
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar, got shape {self.shape}")
        topo = []
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

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            assert_finite(node.grad, f"gradient of {node.op}")
            node._backward(node.grad)
            if free_graph:
                node.grad = None if node._parents else node.grad
                node._parents = ()
                node._backward = None

    # -- elementwise / arithmetic ----------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        out_data = self.data + other.data

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                ga = _unbroadcast(g, a.data.shape)
                a._accum(ga, owned=ga is not g)
            if b.requires_grad:
                gb = _unbroadcast(g, b.data.shape)
                b._accum(gb, owned=gb is not g)

        return Tensor._result(out_data, (self, other), "add", bwd)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        out_data = self.data * other.data

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape), owned=True)
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape), owned=True)

        return Tensor._result(out_data, (self, other), "mul", bwd)

    def __neg__(self):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accum(-g, owned=True)

        return Tensor._result(-self.data, (self,), "neg", bwd)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        return self + (-other)

    __radd__ = __add__
    __rmul__ = __mul__

    def matmul(self, other):
        if self.data.shape[-1] != other.data.shape[0]:
            raise ShapeMismatch(
                f"matmul {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(g @ b.data.T, owned=True)
            if b.requires_grad:
                b._accum(a.data.T @ g, owned=True)

        return Tensor._result(out_data, (self, other), "matmul", bwd)

    def __matmul__(self, other):
        return self.matmul(other)

    # -- shape ops -------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        prev = self.data.shape

        def bwd(g, a=self):
            if a.requires_grad:
                a._accum(g.reshape(prev))  # view of a possibly shared buffer

        return Tensor._result(self.data.reshape(shape), (self,), "reshape", bwd)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bwd(g, a=self):
            if a.requires_grad:
                gt = np.ascontiguousarray(g.transpose(inv))
                a._accum(gt, owned=gt.base is None and gt is not g)

        out = np.ascontiguousarray(self.data.transpose(axes))
        return Tensor._result(out, (self,), "permute", bwd)

    @property
    def T(self):
        return self.permute(tuple(range(self.data.ndim))[::-1])

    def narrow(self, dim, start, length):
        """Contiguous slice [start, start+length) along one axis."""
        idx = [slice(None)] * self.data.ndim
        idx[dim] = slice(start, start + length)
        idx = tuple(idx)
        shape = self.data.shape

        def bwd(g, a=self):
            if a.requires_grad:
                full = np.zeros(shape, dtype=g.dtype)
                full[idx] = g
                a._accum(full, owned=True)

        out = np.ascontiguousarray(self.data[idx])
        return Tensor._result(out, (self,), "narrow", bwd)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bwd(g, a=self):
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, shape))

        return Tensor._result(np.asarray(out_data), (self,), "sum", bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities ----------------------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0)

        def bwd(g, a=self):
            if a.requires_grad:
                a._accum(g * (out_data > 0), owned=True)

        return Tensor._result(out_data, (self,), "relu", bwd)

    def sigmoid(self):
        out_data = _sigmoid(self.data)

        def bwd(g, a=self):
            if a.requires_grad:
                a._accum(g * out_data * (1.0 - out_data), owned=True)

        return Tensor._result(out_data, (self,), "sigmoid", bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g, a=self):
            if a.requires_grad:
                a._accum(g * (1.0 - out_data * out_data), owned=True)

        return Tensor._result(out_data, (self,), "tanh", bwd)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def concat(tensors, dim=0):
    """Concatenate tensors along one axis."""
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=dim)
    sizes = [d.shape[dim] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, ts=tuple(tensors)):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[dim] = slice(lo, hi)
                gs = np.ascontiguousarray(g[tuple(idx)])
                t._accum(gs, owned=gs.base is None)

    return Tensor._result(out_data, tuple(tensors), "concat", bwd)


def dropout(x: Tensor, rate: float, mode: str, rng) -> Tensor:
    """Inverted dropout: train-time scaling, identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate {rate} outside [0, 1)")
    if mode != "train" or rate == 0.0:
        return x
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.data.shape) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    out_data = x.data * mask

    def bwd(g, a=x):
        if a.requires_grad:
            a._accum(g * mask, owned=True)

    return Tensor._result(out_data, (x,), "dropout", bwd)
