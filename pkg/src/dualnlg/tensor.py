"""Reverse-mode automatic differentiation over dense float64 arrays.

Only the operators the generator needs are provided. A :class:`Tensor` wraps a
numpy array; operations on tensors that require gradients record a closure that
propagates the output gradient to the inputs. :func:`backward` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from . import kernels


class NonDifferentiableError(RuntimeError):
    """Raised when a gradient reaches an operation that has no derivative."""


_GRAD_ENABLED = True
_CREATION = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation, beam search)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op", "_seq")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None, op=""):
        self._seq = next(_CREATION)
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def argmax(self, axis=-1):
        return _nondiff(np.argmax(self.data, axis=axis).astype(np.float64), (self,), "argmax")


class Parameter(Tensor):
    """A named leaf tensor whose gradient is owned and accumulated in place."""

    __slots__ = ("name",)

    def __init__(self, value, name):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _nondiff(data, parents, op):
    def _backward(g):
        raise NonDifferentiableError(f"operation {op!r} lies on a gradient path")

    return _make(data, parents, _backward, op)


def _accum(t, g):
    if not t.requires_grad:
        return
    if isinstance(t, Parameter):
        t.grad += g
    elif t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), _backward, "add")


def neg(a):
    def _backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), _backward, "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _backward, "mul")


def relu(a):
    mask = a.data > 0

    def _backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), _backward, "relu")


def sigmoid(a):
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def _backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), _backward, "sigmoid")


def tanh(a):
    out = np.tanh(a.data)

    def _backward(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), _backward, "tanh")


def exp(a):
    out = np.exp(a.data)

    def _backward(g):
        _accum(a, g * out)

    return _make(out, (a,), _backward, "exp")


def expm1(a):
    """``exp(a) - 1`` without cancellation near zero."""
    out = np.expm1(a.data)

    def _backward(g):
        _accum(a, g * (out + 1.0))

    return _make(out, (a,), _backward, "expm1")


def log(a):
    def _backward(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), _backward, "log")


def clamp(a, lo, hi):
    """Clip to [lo, hi]; the gradient is zero where clipping is active."""
    inside = (a.data > lo) & (a.data < hi)

    def _backward(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), _backward, "clamp")


# linear algebra and shape ---------------------------------------------------


def matmul(a, b):
    """``a @ b`` with ``b`` two-dimensional; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def _backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accum(b, a2.T @ g.reshape(-1, b.shape[1]))

    return _make(a.data @ b.data, (a, b), _backward, "matmul")


def tsum(a, axis=None, keepdims=False):
    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), _backward, "sum")


def reshape(a, shape):
    def _backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), _backward, "reshape")


def getitem(a, index):
    def _backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _make(a.data[index], (a,), _backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def _backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), _backward, "stack")


def gather_steps(seq, idx):
    """Pick ``seq[b, idx[b]]`` from a (B, T, H) tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(seq.shape[0])

    def _backward(g):
        full = np.zeros_like(seq.data)
        full[rows, idx] = g
        _accum(seq, full)

    return _make(seq.data[rows, idx], (seq,), _backward, "gather_steps")


def embedding(weight, ids, padding_idx=None):
    """Row lookup ``weight[ids]``; the ``padding_idx`` row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)

    def _backward(g):
        flat = np.ascontiguousarray(g.reshape(-1, weight.shape[1]))
        gw = kernels.scatter_add_rows(weight.shape[0], np.ascontiguousarray(ids.reshape(-1)), flat)
        if padding_idx is not None:
            gw[padding_idx] = 0.0
        _accum(weight, gw)

    return _make(weight.data[ids], (weight,), _backward, "embedding")


# convolution ----------------------------------------------------------------


def _conv_out_len(length, width, stride):
    return (length - width) // stride + 1


def _check_conv(x, w, stride):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if w.ndim != 3:
        raise ValueError(f"filters must be (k, h, d), got {w.shape}")


def conv1d_valid(x, w, stride=1):
    """Valid 1-D convolution.

    ``x`` is (T, d) or (B, T, d); ``w`` is (k, h, d). Output length is
    ``(T - h) // stride + 1`` with ``k`` channels.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_conv(x, w, stride)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    k, h, d = w.shape
    if xd.shape[2] != d:
        raise ValueError(f"input depth {xd.shape[2]} != filter depth {d}")
    if xd.shape[1] < h:
        raise ValueError(f"input length {xd.shape[1]} shorter than filter width {h}")
    cols = kernels.im2col(np.ascontiguousarray(xd), h, stride)
    b, n_out = cols.shape[:2]
    w2 = w.data.reshape(k, h * d)
    out = cols.reshape(b * n_out, h * d) @ w2.T
    out = out.reshape(b, n_out, k)

    def _backward(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(b * n_out, k)
        if w.requires_grad:
            _accum(w, (g2.T @ cols.reshape(b * n_out, h * d)).reshape(k, h, d))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(b, n_out, h, d)
            gx = kernels.col2im(dcols, xd.shape[1], stride)
            _accum(x, gx[0] if squeeze else gx)

    return _make(out[0] if squeeze else out, (x, w), _backward, "conv1d")


def transposed_conv1d(x, w, stride=1):
    """Transposed (fractionally strided) convolution, the adjoint of :func:`conv1d_valid`.

    ``x`` is (T', k) or (B, T', k); ``w`` is (k, h, d). Output is
    ((T' - 1) * stride + h, d).
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_conv(x, w, stride)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    k, h, d = w.shape
    if xd.shape[2] != k:
        raise ValueError(f"input channels {xd.shape[2]} != filter count {k}")
    b, n_in = xd.shape[:2]
    length = (n_in - 1) * stride + h
    w2 = w.data.reshape(k, h * d)
    x2 = xd.reshape(b * n_in, k)
    out = kernels.col2im(np.ascontiguousarray((x2 @ w2).reshape(b, n_in, h, d)), length, stride)

    def _backward(g):
        g3 = np.ascontiguousarray(g[None] if squeeze else g)
        gcols = kernels.im2col(g3, h, stride).reshape(b * n_in, h * d)
        if w.requires_grad:
            _accum(w, (x2.T @ gcols).reshape(k, h, d))
        if x.requires_grad:
            gx = (gcols @ w2.T).reshape(b, n_in, k)
            _accum(x, gx[0] if squeeze else gx)

    return _make(out[0] if squeeze else out, (x, w), _backward, "transposed_conv1d")


# recurrent -------------------------------------------------------------------


def lstm_cell(z, c_prev):
    """Fused LSTM nonlinearity over gate pre-activations ``z`` (B, 4H).

    Gate layout is [input, forget, output, candidate]. Returns ``(h, c)``.
    """
    z, c_prev = as_tensor(z), as_tensor(c_prev)
    hid = c_prev.shape[-1]
    if z.shape[-1] != 4 * hid or z.shape[0] != c_prev.shape[0]:
        raise ValueError(f"lstm shape mismatch z={z.shape} c={c_prev.shape}")
    zd = np.ascontiguousarray(z.data)
    cd = np.ascontiguousarray(c_prev.data)
    h, c, gates, tanh_c = kernels.lstm_forward(zd, cd)

    def _backward(g):
        dh = np.ascontiguousarray(g[:, :hid])
        dc = np.ascontiguousarray(g[:, hid:])
        dz, dcp = kernels.lstm_backward(dh, dc, cd, gates, tanh_c)
        _accum(z, dz)
        _accum(c_prev, dcp)

    hc = _make(np.concatenate([h, c], axis=1), (z, c_prev), _backward, "lstm_cell")
    return hc[:, :hid], hc[:, hid:]


# output layer ---------------------------------------------------------------


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        _accum(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), _backward, "log_softmax")


def cross_entropy(logits, targets, mask=None):
    """Summed negative log-likelihood of integer ``targets`` under softmax(``logits``).

    ``logits`` is (..., V); ``targets`` and ``mask`` have the leading shape.
    Returns a scalar tensor.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    tf = targets.reshape(-1)
    m = np.ones(tf.shape) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(tf.size)
    nll = -(shifted[rows, tf] - logz)
    total = float((nll * m).sum())

    def _backward(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, tf] -= 1.0
        _accum(logits, (float(g) * m[:, None] * p).reshape(logits.shape))

    return _make(np.array(total), (logits,), _backward, "cross_entropy")


def dropout(x, keep_prob, rng, train=True):
    """Inverted dropout: kept units are scaled by ``1 / keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    x = as_tensor(x)
    if not train or keep_prob == 1.0:
        return x
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return mul(x, mask)


# graph traversal -------------------------------------------------------------


def _topo_order(root):
    """Every node reachable from ``root`` through differentiable edges, in creation order.

    Creation order is topological, and unlike a depth-first order it does not
    change when unrelated branches are added to the graph, so gradient sums at
    shared nodes are always accumulated in the same sequence.
    """
    nodes, seen = [], {id(root)}
    stack = [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda n: n._seq)
    return nodes


def backward(loss):
    """Accumulate d(loss)/d(param) into every reachable :class:`Parameter`."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None  # intermediate adjoints are not kept


def parameters_of(loss):
    """All Parameters reachable from ``loss`` (graph introspection for audits)."""
    return [n for n in _topo_order(loss) if isinstance(n, Parameter)]
