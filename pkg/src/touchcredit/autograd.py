"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and remembers the operation that
produced it.  Calling :func:`backward` on a scalar tensor walks the graph in
reverse topological order and accumulates ``d(root)/d(node)`` into each
node's ``grad``.  Graphs are built dynamically, one per forward pass.

Only the operations needed by the sequence models and baselines are
provided.  Binary elementwise operations follow numpy broadcasting; the
backward pass reduces gradients back to each operand's shape.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DomainError, NonFiniteError

__all__ = [
    "Tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softplus",
    "tsum",
    "mean",
    "reshape",
    "stack",
    "slice_last",
    "take",
    "lstm_recurrence",
    "embedding_lookup",
    "softmax_with_offsets",
    "bce",
    "elementwise",
]


class Tensor:
    """A node in the differentiation graph.

    Leaves are created directly from data; interior nodes come out of the
    functions in this module.  ``grad`` has the same shape as ``data`` and
    reads as zeros until a backward pass reaches the node.
    """

    __slots__ = ("data", "_grad", "_parents", "_backward", "requires_grad", "op")

    __array_ufunc__ = None  # ndarray <op> Tensor defers to Tensor

    def __init__(self, data, requires_grad=True):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self._parents = ()
        self._backward = None
        self.requires_grad = requires_grad
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return mul(self, 1.0 / float(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean(self)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False)


def _make(data, parents, backward_fn, op):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    out.op = op
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# backward pass


def backward(root):
    """Accumulate ``d(root)/d(node)`` into every node reachable from ``root``.

    Gradients are added to whatever the nodes already hold, so two calls
    without :meth:`Tensor.zero_grad` in between give twice the gradient.
    """
    if root.data.size != 1:
        raise DomainError(f"backward needs a scalar root, got shape {root.shape}")

    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = pending.get(key)
            pending[key] = pg if prev is None else prev + pg


# ----------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x):
    return expit(x)


def sigmoid(a):
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def softplus(a):
    a = _as_tensor(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    return _make(y, (a,), lambda g: (g * _sigmoid(x),), "softplus")


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp, "neg": neg,
          "log": log, "softplus": softplus}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(op, *args):
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise DomainError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise DomainError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    raise DomainError(f"unknown elementwise op {op!r}")


# ----------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b):
    """``a @ b`` for ``a`` of shape [..., k] and ``b`` of shape [k, n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        ga = g @ B.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if A.ndim == 1:
                gb = np.outer(A, g)
            else:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, B.shape[1])
        return ga, gb

    return _make(A @ B, (a, b), bw, "matmul")


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a):
    a = _as_tensor(a)
    return tsum(a) / a.size


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return _make(y, (a,), lambda g: (g.reshape(old),), "reshape")


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    n = len(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw, "stack")


def slice_last(a, start, stop):
    """Columns ``start:stop`` of the last axis."""
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _make(a.data[..., start:stop], (a,), bw, "slice")


def take(a, index, axis):
    """The sub-array at integer ``index`` along ``axis`` (that axis is dropped)."""
    a = _as_tensor(a)
    shape = a.shape
    if not -shape[axis] <= index < shape[axis]:
        raise DomainError(f"take: index {index} out of range for axis {axis} of {shape}")

    def bw(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _make(np.take(a.data, index, axis=axis), (a,), bw, "take")


def embedding_lookup(W, idx):
    """Columns of ``W`` [dim x vocab] selected by ``idx``; result [*idx.shape, dim].

    Equivalent to multiplying ``W`` by one-hot vectors; the backward pass only
    touches the selected columns.
    """
    W = _as_tensor(W)
    idx = np.asarray(idx, dtype=np.intp)
    if W.data.ndim != 2:
        raise DimensionError(f"embedding matrix must be 2-d, got {W.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= W.shape[1]):
        raise DomainError(f"index out of range for vocabulary of size {W.shape[1]}")

    def bw(g):
        gw = np.zeros(W.shape)
        np.add.at(gw.T, idx, g)
        return (gw,)

    return _make(W.data.T[idx], (W,), bw, "embed")


# ----------------------------------------------------------------------------
# fused operations


def softmax_with_offsets(logits, offsets=None):
    """Softmax over the last axis of ``logits - offsets``.

    ``offsets=None`` is plain softmax.  The maximum is subtracted before
    exponentiating, so large logits are safe.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim == 0 or logits.shape[-1] == 0:
        raise DomainError("softmax over an empty axis")
    if offsets is None:
        offsets = Tensor(np.zeros(logits.shape), requires_grad=False)
    offsets = _as_tensor(offsets)
    if not np.all(np.isfinite(offsets.data)):
        raise DomainError("softmax offsets must be finite")
    _broadcast_shape("softmax_with_offsets", logits, offsets)
    z = logits.data - offsets.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    sl, so = logits.shape, offsets.shape

    def bw(g):
        gz = y * (g - (g * y).sum(axis=-1, keepdims=True))
        return _unbroadcast(gz, sl), _unbroadcast(-gz, so)

    return _make(y, (logits, offsets), bw, "softmax")


def bce(p, y, eps=1e-12):
    """Elementwise binary cross-entropy of probabilities ``p`` against labels ``y``.

    ``p`` is clamped to ``[eps, 1 - eps]``; the gradient is zero where the
    clamp is active.
    """
    p = _as_tensor(p)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), p.shape)
    pc = np.clip(p.data, eps, 1.0 - eps)
    inside = (p.data >= eps) & (p.data <= 1.0 - eps)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))

    def bw(g):
        return (g * inside * (pc - y) / (pc * (1.0 - pc)),)

    return _make(loss, (p,), bw, "bce")


def lstm_recurrence(proj, W_h):
    """Run one LSTM layer over time and return all hidden states.

    ``proj`` [B, T, 4h] holds the input projections ``x_t W_x + b`` with gate
    blocks ordered (input, forget, output, candidate); ``W_h`` [h, 4h] is the
    recurrent weight.  Initial hidden and cell states are zero.  The
    backward pass is hand-written backpropagation through time, so the
    whole layer is a single graph node.
    """
    proj, W_h = _as_tensor(proj), _as_tensor(W_h)
    if proj.data.ndim != 3 or W_h.data.ndim != 2 or W_h.shape[1] != 4 * W_h.shape[0] \
            or proj.shape[2] != W_h.shape[1]:
        raise DimensionError(f"lstm_recurrence: incompatible shapes {proj.shape} and {W_h.shape}")
    Z, W = proj.data, W_h.data
    B, T, _ = Z.shape
    h = W.shape[0]
    H = np.empty((B, T, h))
    C = np.empty((B, T, h))
    TC = np.empty((B, T, h))
    G = np.empty((B, T, 4 * h))  # activated gates
    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    for t in range(T):
        z = Z[:, t] + h_prev @ W if t else Z[:, t]
        a = G[:, t]
        a[:, :3 * h] = expit(z[:, :3 * h])
        a[:, 3 * h:] = np.tanh(z[:, 3 * h:])
        c_prev = a[:, h:2 * h] * c_prev + a[:, :h] * a[:, 3 * h:]
        tc = np.tanh(c_prev)
        h_prev = a[:, 2 * h:3 * h] * tc
        C[:, t], TC[:, t], H[:, t] = c_prev, tc, h_prev

    def bw(dH):
        dZ = np.empty_like(Z)
        dW = np.zeros_like(W) if W_h.requires_grad else None
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a = G[:, t]
            i, f, o, g = a[:, :h], a[:, h:2 * h], a[:, 2 * h:3 * h], a[:, 3 * h:]
            tc = TC[:, t]
            dh = dH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            c_before = C[:, t - 1] if t else 0.0
            dz = dZ[:, t]
            dz[:, :h] = dc * g * i * (1.0 - i)
            dz[:, h:2 * h] = dc * c_before * f * (1.0 - f)
            dz[:, 2 * h:3 * h] = dh * tc * o * (1.0 - o)
            dz[:, 3 * h:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            if t:
                dh_next = dz @ W.T
                if dW is not None:
                    dW += H[:, t - 1].T @ dz
        return dZ, dW

    return _make(H, (proj, W_h), bw, "lstm")
