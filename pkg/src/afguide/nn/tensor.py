"""Reverse-mode autodiff over numpy arrays.

A small tape: every operation returns a `Tensor` holding the result plus a
closure that routes the incoming gradient to its parents. `backward()` on
a scalar loss walks the graph in reverse topological order. Only the layer
types this package needs are covered (dense nets, a causal transformer,
squashed-Gaussian policies); this is not a general autodiff system.

Float width is carried by the arrays themselves: build parameters in
float64 for verification work, float32 for training. Operations never
promote silently; mixing widths raises.
"""

from __future__ import annotations

import numpy as np

from .._core import kernels as K


class GradientMode:
    """Global switch disabling graph construction (inference / targets)."""

    enabled = True


class no_grad:
    def __enter__(self):
        self._prev = GradientMode.enabled
        GradientMode.enabled = False
        return self

    def __exit__(self, *exc):
        GradientMode.enabled = self._prev
        return False


class Tensor:
    """Array node in the autodiff graph.

    `data` is a numpy array, `grad` the accumulated dLoss/dself (same shape,
    allocated lazily). Leaf tensors created with requires_grad=True are the
    trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph ------------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar loss")
        if not np.isfinite(self.data):
            raise FloatingPointError("backward() on a non-finite loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # interior nodes are one-shot; free their references
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None if node is not self else node.grad

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g if g.flags.owndata and g.base is None else g.copy()
    else:
        t.grad = t.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wants_graph(*tensors: Tensor) -> bool:
    return GradientMode.enabled and any(
        t.requires_grad or t._backward is not None or t._parents for t in tensors
    )


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    out._parents = parents
    out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    if not _wants_graph(a, b):
        return Tensor(data)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    if not _wants_graph(a, b):
        return Tensor(data)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    if not _wants_graph(a, b):
        return Tensor(data)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    if not _wants_graph(a):
        return Tensor(-a.data)

    def backward(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def scale(a, c: float):
    """a * c for a python scalar c (cheaper than full mul)."""
    a = as_tensor(a)
    c = float(c)  # numpy scalars would promote float32 arrays
    data = a.data * c
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g * c)

    return _node(data, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = np.matmul(a.data, b.data)
    if not _wants_graph(a, b):
        return Tensor(data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


def linear(x, w, b=None):
    """x @ w (+ b). Accepts (..., in) inputs; weight is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    data = np.matmul(x.data, w.data)
    if b is not None:
        b = as_tensor(b)
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)
    if not _wants_graph(*parents):
        return Tensor(data)

    def backward(g):
        gw = np.matmul(
            x.data.reshape(-1, x.data.shape[-1]).T, g.reshape(-1, g.shape[-1])
        )
        gx = np.matmul(g, w.data.T)
        _accumulate(x, gx)
        _accumulate(w, gw)
        if b is not None:
            _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(data, parents, backward)


# -- nonlinearities -----------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    data = K.relu_fwd(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, K.relu_bwd(a.data, g))

    return _node(data, (a,), backward)


def gelu(a):
    a = as_tensor(a)
    data = K.gelu_fwd(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, K.gelu_bwd(a.data, g))

    return _node(data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    data = K.tanh_fwd(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, K.tanh_bwd(data, g))

    return _node(data, (a,), backward)


def softplus(a):
    a = as_tensor(a)
    data = K.softplus_fwd(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, K.softplus_bwd(a.data, g))

    return _node(data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g * data)

    return _node(data, (a,), backward)


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(data, (a,), backward)


def square(a):
    a = as_tensor(a)
    if not _wants_graph(a):
        return Tensor(a.data * a.data)

    def backward(g):
        _accumulate(a, g * (2.0 * a.data))

    return _node(a.data * a.data, (a,), backward)


def absolute(a):
    a = as_tensor(a)
    data = np.abs(a.data)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g * np.sign(a.data))

    return _node(data, (a,), backward)


def clamp(a, lo: float, hi: float):
    """Hard clip; gradient passes only where lo <= a <= hi."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    if not _wants_graph(a):
        return Tensor(data)
    passthrough = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accumulate(a, g * passthrough)

    return _node(data, (a,), backward)


def minimum(a, b):
    """Elementwise min; subgradient routes to the smaller input (ties: a)."""
    a, b = as_tensor(a), as_tensor(b)
    data = np.minimum(a.data, b.data)
    if not _wants_graph(a, b):
        return Tensor(data)
    take_a = a.data <= b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * take_a, a.data.shape))
        _accumulate(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _node(data, (a, b), backward)


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    if not _wants_graph(a):
        return Tensor(data)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _node(data, (a,), backward)


def take(a, key):
    """Basic slicing only (no duplicated indices): a[key]."""
    a = as_tensor(a)
    data = a.data[key]
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        _accumulate(a, ga)

    return _node(data, (a,), backward)


def concat(tensors, axis: int = -1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _wants_graph(*tensors):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(data, tuple(tensors), backward)


def interleave_steps(a, b):
    """(B, T, d), (B, T, d) -> (B, 2T, d) with a_t at 2t and b_t at 2t+1."""
    a, b = as_tensor(a), as_tensor(b)
    B, T, d = a.data.shape
    data = np.empty((B, 2 * T, d), dtype=a.data.dtype)
    data[:, 0::2] = a.data
    data[:, 1::2] = b.data
    if not _wants_graph(a, b):
        return Tensor(data)

    def backward(g):
        _accumulate(a, g[:, 0::2])
        _accumulate(b, g[:, 1::2])

    return _node(data, (a, b), backward)


def embedding(table, idx):
    """Row lookup table[idx]; gradient scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    data = table.data[idx]
    if not _wants_graph(table):
        return Tensor(data)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _accumulate(table, gt)

    return _node(data, (table,), backward)


# -- reductions ----------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not _wants_graph(a):
        return Tensor(data)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.data.shape[i] for i in axis])
        )
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- fused layers ---------------------------------------------------------------


def layer_norm(x, w, b, eps: float = 1e-5):
    """Normalize over the last axis. w/b are (features,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    feat = x.data.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, feat))
    y2, mu, rstd = K.layernorm_fwd(x2, w.data, b.data, eps)
    data = y2.reshape(x.data.shape)
    if not _wants_graph(x, w, b):
        return Tensor(data)

    def backward(g):
        gx2, gw, gb = K.layernorm_bwd(x2, w.data, mu, rstd, g.reshape(-1, feat))
        _accumulate(x, gx2.reshape(x.data.shape))
        _accumulate(w, gw)
        _accumulate(b, gb)

    return _node(data, (x, w, b), backward)


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to mask==True entries.

    Fully masked rows yield zero rows. `mask` is a bool array broadcastable
    to scores.shape; masked entries get probability exactly 0, so changes
    to their score values cannot affect the output.
    """
    scores = as_tensor(scores)
    cols = scores.data.shape[-1]
    m2 = np.ascontiguousarray(
        np.broadcast_to(mask, scores.data.shape).reshape(-1, cols)
    )
    s2 = np.ascontiguousarray(scores.data.reshape(-1, cols))
    p2 = K.masked_softmax_fwd(s2, m2)
    data = p2.reshape(scores.data.shape)
    if not _wants_graph(scores):
        return Tensor(data)

    def backward(g):
        gs = K.masked_softmax_bwd(p2, np.ascontiguousarray(g.reshape(-1, cols)))
        _accumulate(scores, gs.reshape(scores.data.shape))

    return _node(data, (scores,), backward)


def dropout(x, p: float, rng: np.random.Generator):
    """Inverted dropout; call only in training mode."""
    x = as_tensor(x)
    if p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    factor = 1.0 / (1.0 - p)
    data = x.data * keep * factor
    if not _wants_graph(x):
        return Tensor(data)

    def backward(g):
        _accumulate(x, g * keep * factor)

    return _node(data, (x,), backward)
