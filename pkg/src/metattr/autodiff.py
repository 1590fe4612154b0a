"""Dense float32 tensors with tape-based reverse-mode differentiation.

Values are stored as float32. Every op computes in float64 and rounds the
result once, so reductions accumulate in double precision and results do not
depend on how a batch is split.
"""

import contextlib
import threading

import numpy as np

P_MIN = 1e-7
"""Probability floor applied before any logarithm of a classifier output."""

_GELU_C = np.sqrt(2.0 / np.pi)
_mode = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def grad_enabled():
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        with np.errstate(over="ignore", invalid="ignore"):
            arr = np.asarray(data, dtype=np.float32)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones(self.shape)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    g32 = g.astype(np.float32)
                    node.grad = g32 if node.grad is None else node.grad + g32
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward, op):
    track = grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(value, op=op)
    return Tensor(value, True, _parents=tuple(parents), _backward=backward, op=op)


def _f64(t):
    return t.data.astype(np.float64)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (leading dims and size-1 dims)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) == 0 or long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(_f64(a) + _f64(b), (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(_f64(a) - _f64(b), (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    av, bv = _f64(a), _f64(b)

    def backward(g):
        return (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                _unbroadcast(g * av, b.shape) if b.requires_grad else None)

    return _result(av * bv, (a, b), backward, "mul")


def relu(x):
    xv = _f64(x)
    on = xv > 0

    def backward(g):
        return (g * on,)

    return _result(np.where(on, xv, 0.0), (x,), backward, "relu")


def gelu(x):
    """GELU, tanh approximation."""
    xv = _f64(x)
    x2 = xv * xv
    t = np.tanh(_GELU_C * (xv + 0.044715 * xv * x2))

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * d_inner),)

    return _result(0.5 * xv * (1.0 + t), (x,), backward, "gelu")


def log(x):
    """Natural log; non-positive input is rejected (clamp first)."""
    xv = _f64(x)
    if (xv <= 0).any():
        raise ValueError(f"log: {int((xv <= 0).sum())} non-positive entries; clamp before taking logs")

    def backward(g):
        return (g / xv,)

    return _result(np.log(xv), (x,), backward, "log")


def clamp_min(x, floor):
    xv = _f64(x)
    keep = xv >= floor

    def backward(g):
        return (g * keep,)

    return _result(np.where(keep, xv, floor), (x,), backward, "clamp_min")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ba, bb = a.shape[:-2], b.shape[:-2]
    if ba and bb and ba != bb:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ")
    av, bv = _f64(a), _f64(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(av @ bv, (a, b), backward, "matmul")


def layer_norm(x, eps=1e-5):
    """Normalize over the last axis (no affine part)."""
    xv = _f64(x)
    mu = xv.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(xv.var(axis=-1, keepdims=True) + eps)
    y = (xv - mu) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y, (x,), backward, "layer_norm")


def softmax(x, axis=-1):
    xv = _f64(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    xv = _f64(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    xv = _f64(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _result(xv.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    xv = _f64(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, xv.shape).copy(),)

    return _result(xv.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def mse(a, b):
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = _f64(a) - _f64(b)

    def backward(g):
        d = g * 2.0 * diff / diff.size
        return (d if a.requires_grad else None), (-d if b.requires_grad else None)

    return _result(np.mean(diff * diff), (a, b), backward, "mse")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ValueError("cross_entropy: label out of range")
    xv = _f64(logits)
    shifted = xv - xv.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    n = len(labels)

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return _result(-logp[rows, labels].mean(), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(_f64(x).reshape(shape), (x,), backward, "reshape")


def transpose(x, axes):
    inverse = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(_f64(x), axes), (x,), backward, "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    try:
        value = np.concatenate([_f64(t) for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} do not conform") from exc

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(value, tensors, backward, "concat")


def getitem(x, index):
    xv = _f64(x)

    def backward(g):
        out = np.zeros_like(xv)
        np.add.at(out, index, g)
        return (out,)

    return _result(xv[index], (x,), backward, "getitem")
