"""Small reverse-mode autodiff over float64 numpy arrays."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np


class Tensor:
    """A node in the computation graph.

    Leaves created with ``requires_grad=True`` accumulate into ``grad``.
    Interior nodes keep a closure that pushes their output gradient to
    their parents.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise --------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.value / b.value, b.shape)

    return _node(a.value / b.value, (a, b), back)


def square(a):
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.value
    x2 = x * x
    t = x2 * (0.044715 * _GELU_C)
    t += _GELU_C
    t *= x
    np.tanh(t, out=t)
    half = t + 1.0
    half *= 0.5          # 0.5 (1 + t)
    out = x * half

    def back(g):
        d = x2 * (3 * 0.044715 * _GELU_C)
        d += _GELU_C
        d *= x
        d *= 0.5
        d *= 1.0 - t * t
        d += half
        d *= g
        return (d,)

    return _node(out, (a,), back)


# --- reductions and shape ----------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    a = as_tensor(a)

    def back(g):
        full = np.zeros(a.shape)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _node(a.value[idx], (a,), back)


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.value for t in tensors], axis=axis), tensors, back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tensors, back)


# --- linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    # a stack of rows against a shared 2-D weight runs as one GEMM
    flat = bv.ndim == 2 and av.ndim > 2

    def back(g):
        if bv.ndim == 1:
            ga = np.multiply.outer(g, bv)
            gb = np.tensordot(g, av, axes=(tuple(range(g.ndim)), tuple(range(av.ndim - 1))))
            return _unbroadcast(ga, a.shape), gb
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bv.T).reshape(a.shape)
            gb = av.reshape(-1, av.shape[-1]).T @ g2
            return ga, gb
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    if flat:
        out = (av.reshape(-1, av.shape[-1]) @ bv).reshape(av.shape[:-1] + bv.shape[-1:])
    else:
        out = av @ bv
    return _node(out, (a, b), back)


# --- fused kernels ------------------------------------------------------------------

def softmax(a, axis=-1):
    a = as_tensor(a)
    out = a.value - a.value.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def back(g):
        gi = g * out
        gi -= out * gi.sum(axis=axis, keepdims=True)
        return (gi,)

    return _node(out, (a,), back)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.value + beta.value

    def back(g):
        gx = g * gamma.value
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        return dx, gg, gb

    return _node(out, (a, gamma, beta), back)


# --- traversal ----------------------------------------------------------------------

def _topo(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, grad=None):
    """Reverse-mode sweep from ``loss``; leaf grads accumulate.

    A graph can be swept once. Build a fresh forward pass for another sweep.
    """
    if loss._consumed:
        raise RuntimeError("backward() already ran on this graph; rebuild the forward pass first")
    if grad is None:
        if loss.value.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.value)
    if not loss.requires_grad:
        loss._consumed = True
        return
    grads = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None
        node._consumed = True
    loss._consumed = True


class ParamStore:
    """Ordered, uniquely named set of trainable leaves."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def state(self) -> OrderedDict:
        return OrderedDict((k, v.value.copy()) for k, v in self._params.items())

    def load_state(self, state):
        for k, v in state.items():
            target = self._params[k]
            if target.value.shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}: {target.value.shape} vs {np.shape(v)}")
            target.value = np.array(v, dtype=np.float64)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self._params.items():
            out.add(k, v.value)
        return out
