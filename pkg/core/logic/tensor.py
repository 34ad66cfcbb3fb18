"""
tensor.py

A minimal numpy-backed Tensor with reverse-mode automatic differentiation.

Only the operations the beam network needs are implemented. Every op records
its parents and a closure that pushes the output gradient back to them;
`backward()` walks the recorded graph in reverse topological order once, then
releases it.
"""
from contextlib import contextmanager

import numpy

from .exceptions import GraphConsumed, ShapeMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    """run ops without recording a graph (evaluation passes)"""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _noop():
    return None


def _unbroadcast(grad, shape):
    """sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x, like=None):
    """wrap x in a Tensor; constants combined with `like` take its dtype"""
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(numpy.asarray(x, dtype=like.data.dtype))
    return Tensor(x)


class Tensor:
    def __init__(self, data, requires_grad=False, _children=(), _op=""):
        data = numpy.asarray(data)
        if not numpy.issubdtype(data.dtype, numpy.floating):
            data = data.astype(numpy.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = _noop
        self._prev = tuple(_children)
        self._op = _op
        self._consumed = False

    # -------------------------------------------------------------------------
    # plumbing

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return "Tensor(shape={0}, op='{1}', requires_grad={2})".format(self.shape, self._op, self.requires_grad)

    def _make(self, data, parents, op):
        """output node for an op over `parents`; grad tracking only when enabled
        and some parent needs it"""
        track = _grad_enabled and any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=track, _children=parents if track else (), _op=op)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = numpy.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def _topo(self):
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        return topo

    def backward(self, grad=None):
        """reverse-mode pass from this node; the recorded graph is released
        afterwards, so a second call needs a fresh forward"""
        if self._consumed:
            raise GraphConsumed("backward() already ran on this graph; re-run the forward pass first")
        if not self.requires_grad:
            raise GraphConsumed("no recorded graph: nothing in this expression requires a gradient")
        topo = self._topo()
        self.grad = numpy.ones_like(self.data) if grad is None else numpy.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            node._backward()
        for node in topo:
            if node._prev:
                node._backward = _noop
                node._prev = ()
                node._consumed = True
                if node is not self:
                    node.grad = None

    # -------------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        other = as_tensor(other, self)
        out = self._make(self.data + other.data, (self, other), "+")

        def _backward():
            self._accumulate(out.grad)
            other._accumulate(out.grad)
        out._backward = _backward
        return out

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other, self))

    def __rsub__(self, other):
        return as_tensor(other, self) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self)
        out = self._make(self.data * other.data, (self, other), "*")

        def _backward():
            if self.requires_grad:
                self._accumulate(other.data * out.grad)
            if other.requires_grad:
                other._accumulate(self.data * out.grad)
        out._backward = _backward
        return out

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        return self * as_tensor(other, self) ** -1.0

    def __rtruediv__(self, other):
        return as_tensor(other, self) * self ** -1.0

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise ShapeMismatch("only constant exponents are supported")
        out = self._make(self.data ** exponent, (self,), "**{0}".format(exponent))

        def _backward():
            self._accumulate(exponent * self.data ** (exponent - 1) * out.grad)
        out._backward = _backward
        return out

    def __matmul__(self, other):
        other = as_tensor(other, self)
        if self.data.shape[-1] != other.data.shape[0 if other.data.ndim == 1 else -2]:
            raise ShapeMismatch("matmul {0} @ {1}".format(self.shape, other.shape))
        out = self._make(numpy.matmul(self.data, other.data), (self, other), "@")

        def _backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(numpy.matmul(g, numpy.swapaxes(other.data, -1, -2)))
            if other.requires_grad:
                a = self.data.reshape(-1, self.data.shape[-1])
                other._accumulate(a.T @ g.reshape(-1, g.shape[-1]))
        out._backward = _backward
        return out

    # -------------------------------------------------------------------------
    # reductions

    def sum(self, axis=None, keepdims=False):
        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = numpy.expand_dims(g, axis)
            self._accumulate(numpy.broadcast_to(g, self.data.shape))
        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(numpy.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -------------------------------------------------------------------------
    # elementwise

    def relu(self):
        out = self._make(numpy.maximum(self.data, 0.0), (self,), "relu")

        def _backward():
            self._accumulate((self.data > 0) * out.grad)
        out._backward = _backward
        return out

    def sigmoid(self):
        s = 0.5 * (numpy.tanh(0.5 * self.data) + 1.0)
        out = self._make(s, (self,), "sigmoid")

        def _backward():
            self._accumulate(s * (1.0 - s) * out.grad)
        out._backward = _backward
        return out

    def tanh(self):
        t = numpy.tanh(self.data)
        out = self._make(t, (self,), "tanh")

        def _backward():
            self._accumulate((1.0 - t * t) * out.grad)
        out._backward = _backward
        return out

    def exp(self):
        e = numpy.exp(self.data)
        out = self._make(e, (self,), "exp")

        def _backward():
            self._accumulate(e * out.grad)
        out._backward = _backward
        return out

    def log(self):
        out = self._make(numpy.log(self.data), (self,), "log")

        def _backward():
            self._accumulate(out.grad / self.data)
        out._backward = _backward
        return out

    def sqrt(self):
        return self ** 0.5

    def clamp_min(self, floor):
        """max(x, floor); the gradient is zero where the floor is active"""
        out = self._make(numpy.maximum(self.data, floor), (self,), "clamp_min")

        def _backward():
            self._accumulate((self.data >= floor) * out.grad)
        out._backward = _backward
        return out

    def softmax(self, axis=-1):
        """max-subtracted softmax along `axis`"""
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = numpy.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
        out = self._make(s, (self,), "softmax")

        def _backward():
            g = out.grad
            self._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))
        out._backward = _backward
        return out

    # -------------------------------------------------------------------------
    # indexing / shape

    def __getitem__(self, idx):
        out = self._make(self.data[idx], (self,), "getitem")

        def _backward():
            g = numpy.zeros_like(self.data)
            numpy.add.at(g, idx, out.grad)
            self._accumulate(g)
        out._backward = _backward
        return out

    def pick(self, index):
        """select one entry along the last axis per leading position:
        out[..., ] = x[..., index[...]]"""
        index = numpy.asarray(index, dtype=numpy.int64)
        if index.shape != self.data.shape[:-1]:
            raise ShapeMismatch("pick index {0} vs tensor {1}".format(index.shape, self.shape))
        picked = numpy.take_along_axis(self.data, index[..., None], axis=-1)[..., 0]
        out = self._make(picked, (self,), "pick")

        def _backward():
            g = numpy.zeros_like(self.data)
            numpy.put_along_axis(g, index[..., None], out.grad[..., None], axis=-1)
            self._accumulate(g)
        out._backward = _backward
        return out

    def reshape(self, *shape):
        out = self._make(self.data.reshape(*shape), (self,), "reshape")

        def _backward():
            self._accumulate(out.grad.reshape(self.data.shape))
        out._backward = _backward
        return out


def stack(tensors, axis=0):
    """stack tensors along a new axis"""
    tensors = [as_tensor(t) for t in tensors]
    data = numpy.stack([t.data for t in tensors], axis=axis)
    out = tensors[0]._make(data, tuple(tensors), "stack")

    def _backward():
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(numpy.take(out.grad, i, axis=axis))
    out._backward = _backward
    return out


def parameter(data):
    return Tensor(numpy.array(data, copy=True), requires_grad=True)
