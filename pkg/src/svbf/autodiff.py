"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

Each operation builds a node holding its output value, its parents and a
backward closure; ``grad`` walks the graph once in reverse topological
order. Graphs are rebuilt per training step (the model unrolls over time
and backpropagates through the whole sequence), so nodes are cheap,
single-use objects. A graph is owned by one thread; parallelism happens
across graphs, never within one.

Elementwise nonlinearities and softmax dispatch to ``svbf._kernels``
(compiled extension when available, numpy otherwise).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from . import _kernels as K

__all__ = [
    "Tensor",
    "GradError",
    "as_tensor",
    "no_grad",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tsum",
    "tmean",
    "exp",
    "log",
    "sqrt",
    "square",
    "sigmoid",
    "tanh",
    "relu",
    "softplus",
    "softmax",
    "logsumexp",
    "clip",
    "concat",
    "stack",
    "reshape",
    "bank_mix",
    "bmv",
    "gated_logit_mix",
    "lstm_cell",
]

_node_ids = itertools.count()
_grad_enabled = True


class GradError(ValueError):
    """Raised for invalid backward requests (non-scalar loss, NaN forward values)."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure numpy forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus its position in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_nid", "op")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None, op="leaf", dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd
        self._nid = next(_node_ids)
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, op="detach")

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"

    # arithmetic sugar
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), op="const")


def _coerce(x, like: Tensor) -> Tensor:
    """Wrap plain scalars/arrays without changing the dtype of the graph."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), op="const")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a binary-op operand pair; plain scalars adopt the Tensor's dtype."""
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    return as_tensor(a), as_tensor(b)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # always own a fresh buffer: g may alias another node's gradient
        if g.shape != t.data.shape:
            g = np.broadcast_to(g, t.data.shape)
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, bwd, op) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, bwd=bwd, op=op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = a.data.size / out.size

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg / scale, a.data.shape))

    return _make(out, (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# elementwise


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _make(out, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g / (2.0 * out))

    return _make(out, (a,), bwd, "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bwd, "square")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = K.sigmoid_fwd(a.data)

    def bwd(g):
        _accum(a, K.sigmoid_bwd(out, g))

    return _make(out, (a,), bwd, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = K.tanh_fwd(a.data)

    def bwd(g):
        _accum(a, K.tanh_bwd(out, g))

    return _make(out, (a,), bwd, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, K.relu_bwd(a.data, np.ascontiguousarray(g)))

    return _make(K.relu_fwd(a.data), (a,), bwd, "relu")


def softplus(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, K.softplus_bwd(a.data, np.ascontiguousarray(g)))

    return _make(K.softplus_fwd(a.data), (a,), bwd, "softplus")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the interior."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        _accum(a, np.where((a.data > lo) & (a.data < hi), g, 0.0))

    return _make(out, (a,), bwd, "clip")


# ---------------------------------------------------------------------------
# softmax family (last axis)


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    out = K.softmax_fwd(_rows(a.data)).reshape(a.data.shape)

    def bwd(g):
        gx = K.softmax_bwd(_rows(out), _rows(g))
        _accum(a, gx.reshape(a.data.shape))

    return _make(out, (a,), bwd, "softmax")


def logsumexp(a, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    out = m + np.log(np.sum(np.exp(a.data - m), axis=-1, keepdims=True))

    def bwd(g):
        sm = np.exp(a.data - out)
        gg = g if keepdims else np.expand_dims(g, -1)
        _accum(a, gg * sm)

    return _make(out if keepdims else np.squeeze(out, -1), (a,), bwd, "logsumexp")


# ---------------------------------------------------------------------------
# shaping


def _index(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        _accum(a, buf)

    return _make(out, (a,), bwd, "index")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(out, tuple(parts), bwd, "concat")


def stack(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        for i, p in enumerate(parts):
            if p.requires_grad:
                _accum(p, moved[i])

    return _make(out, tuple(parts), bwd, "stack")


# ---------------------------------------------------------------------------
# fused model ops


def bank_mix(s, bank) -> Tensor:
    """Weighted combination of a bank of systems: out = sum_i s[..., i] * bank[i]."""
    s, bank = as_tensor(s), as_tensor(bank)
    if bank.ndim not in (2, 3):
        raise ValueError(f"bank must be 2-D or 3-D, got {bank.ndim}-D")
    m = bank.shape[0]
    if s.shape[-1] != m:
        raise ValueError(f"weight dim {s.shape[-1]} does not match bank size {m}")
    bank_flat = bank.data.reshape(m, -1)
    s_flat = s.data.reshape(-1, m)
    out = (s_flat @ bank_flat).reshape(s.data.shape[:-1] + bank.data.shape[1:])

    def bwd(g):
        g_flat = g.reshape(-1, bank_flat.shape[1])
        if s.requires_grad:
            _accum(s, (g_flat @ bank_flat.T).reshape(s.data.shape))
        if bank.requires_grad:
            _accum(bank, (s_flat.T @ g_flat).reshape(bank.data.shape))

    return _make(out, (s, bank), bwd, "bank_mix")


def bmv(mats, vecs) -> Tensor:
    """Batched matrix-vector product: (..., p, q) x (..., q) -> (..., p)."""
    mats, vecs = as_tensor(mats), as_tensor(vecs)
    out = np.einsum("...pq,...q->...p", mats.data, vecs.data)

    def bwd(g):
        if mats.requires_grad:
            _accum(mats, _unbroadcast(np.einsum("...p,...q->...pq", g, vecs.data), mats.data.shape))
        if vecs.requires_grad:
            _accum(vecs, _unbroadcast(np.einsum("...pq,...p->...q", mats.data, g), vecs.data.shape))

    return _make(out, (mats, vecs), bwd, "bmv")


def gated_logit_mix(lt, lm, gate) -> Tensor:
    """log(gate * e^lt + (1 - gate) * e^lm), stable, exact at gate = 0 or 1.

    The mix happens on the exponentiated-logit scale; the shared max is
    subtracted so neither exponential can overflow.
    """
    lt, lm, gate = as_tensor(lt), as_tensor(lm), as_tensor(gate)
    m = np.maximum(lt.data, lm.data)
    et = np.exp(lt.data - m)
    em = np.exp(lm.data - m)
    wt = gate.data * et
    wm = (1.0 - gate.data) * em
    s = np.where(wt + wm > 0.0, wt + wm, 1.0)
    pure_t = gate.data == 1.0
    pure_m = gate.data == 0.0
    out = np.log(s) + m
    out = np.where(pure_t, np.broadcast_to(lt.data, out.shape), out)
    out = np.where(pure_m, np.broadcast_to(lm.data, out.shape), out)

    def bwd(g):
        if lt.requires_grad:
            d = np.where(pure_t, 1.0, np.where(pure_m, 0.0, wt / s))
            _accum(lt, _unbroadcast(g * d, lt.data.shape))
        if lm.requires_grad:
            d = np.where(pure_m, 1.0, np.where(pure_t, 0.0, wm / s))
            _accum(lm, _unbroadcast(g * d, lm.data.shape))
        if gate.requires_grad:
            _accum(gate, _unbroadcast(g * (et - em) / s, gate.data.shape))

    return _make(out, (lt, lm, gate), bwd, "gated_logit_mix")


def lstm_cell(x, h, c, wx, wh, b):
    """One LSTM step; returns (h_next, c_next). Gate order: input, forget, cell, output."""
    z = add(add(matmul(x, wx), matmul(h, wh)), b)
    H = h.shape[-1]
    i = sigmoid(z[..., 0:H])
    f = sigmoid(z[..., H : 2 * H])
    g = tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H : 4 * H])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


# ---------------------------------------------------------------------------
# backward driver


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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the graph, accumulating into .grad."""
    if loss.data.size != 1:
        raise GradError(f"loss must be scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    bad = None
    for node in order:
        if np.isnan(node.data).any():
            if bad is None or node._nid < bad._nid:
                bad = node
    if bad is not None:
        raise GradError(f"NaN in forward value at node #{bad._nid} (op={bad.op})")
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def grad(loss: Tensor, params) -> dict[str, Tensor]:
    """Gradient of a scalar loss for every parameter in a ParamStore.

    Parameters the loss does not reach get zero gradients.
    """
    backward(loss)
    out = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out[name] = Tensor(g)
    return out
