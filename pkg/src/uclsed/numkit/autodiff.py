"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tensor` records the operation that produced it together with a
closure mapping the output gradient to gradients of its inputs.
``Tensor.backward`` walks the recorded graph in reverse topological order.
Arrays are at most 2-D; 1-D vectors are accepted wherever numpy broadcasting
makes sense.
"""
import contextlib

import numpy as np
import scipy.sparse as sp

from . import special

_GRAD_ENABLED = True
# up to this many entries the edge-weight gradient goes through a dense N x N product
_DENSE_SDDMM_LIMIT = 16_000_000


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape (inference, centroid refresh)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        # leaves own a zero gradient so untouched parameters read as zeros
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64) + (0.0 if self.grad is None or self._parents else self.grad)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return gather_rows(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a, k):
    a = as_tensor(a)
    k = float(k)
    return _make(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1.0),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a):
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return reduce_sum(a, axis, keepdims) * (1.0 / n)


def reduce_max(a, axis=-1, keepdims=False):
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
        return (full,)

    return _make(out if keepdims else np.squeeze(out, axis), (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a):
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _make(out, (a,), lambda g: (g * sig,))


def clamp_min(a, low):
    a = as_tensor(a)
    keep = a.data >= low
    return _make(np.maximum(a.data, low), (a,), lambda g: (g * keep,))


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = shifted / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out if keepdims else np.squeeze(out, axis), (a,), backward)


def digamma(a):
    a = as_tensor(a)
    return _make(special.digamma(a.data), (a,), lambda g: (g * special.trigamma(a.data),))


def lgamma(a):
    a = as_tensor(a)
    return _make(special.lgamma(a.data), (a,), lambda g: (g * special.digamma(a.data),))


def normalize_rows(a, eps=1e-12):
    """Scale each row to unit L2 norm."""
    a = as_tensor(a)
    norm = sqrt(reduce_sum(a * a, axis=1, keepdims=True) + eps * eps)
    return a / norm


def gather_rows(a, idx):
    a = as_tensor(a)
    idx = np.asarray(idx)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def segment_sum(values, segment_ids, num_segments):
    """Sum rows of ``values`` that share a segment id; output has ``num_segments`` rows."""
    values = as_tensor(values)
    segment_ids = np.asarray(segment_ids)
    flat = values.data.reshape(len(segment_ids), -1)
    out = np.stack(
        [np.bincount(segment_ids, weights=flat[:, k], minlength=num_segments) for k in range(flat.shape[1])],
        axis=1,
    ).reshape((num_segments,) + values.data.shape[1:])
    return _make(out, (values,), lambda g: (g[segment_ids],))


def spmm(rows, cols, weights, dense, num_rows):
    """out[i] = sum_e weights[e] * dense[cols[e]] over edges e with rows[e] == i.

    ``weights`` is a 1-D tensor over edges and is differentiable together with
    ``dense``; the sparsity pattern itself is constant.
    """
    weights, dense = as_tensor(weights), as_tensor(dense)
    w = weights.data.reshape(-1)
    mat = sp.csr_matrix((w, (rows, cols)), shape=(num_rows, dense.data.shape[0]))

    def backward(g):
        if num_rows * dense.data.shape[0] <= _DENSE_SDDMM_LIMIT:
            gw = (g @ dense.data.T)[rows, cols]
        else:
            gw = np.einsum("ij,ij->i", g[rows], dense.data[cols])
        return gw.reshape(weights.data.shape), mat.T @ g

    return _make(mat @ dense.data, (weights, dense), backward)


def temporal_aggregate(rate, dense, edges):
    """Fused time-decay attention and neighbour sum.

    For node i with decay rate r_i, weights a_ij = softmax_j(-r_i * dt_ij)
    over its stored neighbours, and out_i = sum_j a_ij * dense_j. ``edges``
    provides CSR ``indptr``, ``cols``, row ids ``rows``, gaps ``dt`` (E, 1)
    and ``num_nodes``. The backward pass uses the closed form
    d a_ij / d r_i = a_ij * (sum_k a_ik dt_ik - dt_ij).
    """
    rate, dense = as_tensor(rate), as_tensor(dense)
    n = edges.num_nodes
    dt = edges.dt.reshape(-1)
    logits = -rate.data.reshape(-1)[edges.rows] * dt
    row_max = np.maximum.reduceat(logits, edges.indptr[:-1]) if len(logits) else logits
    ex = np.exp(logits - row_max[edges.rows])
    a = ex / np.bincount(edges.rows, weights=ex, minlength=n)[edges.rows]
    mat = sp.csr_matrix((a, edges.cols, edges.indptr), shape=(n, dense.data.shape[0]))

    def backward(g):
        mean_dt = np.bincount(edges.rows, weights=a * dt, minlength=n)
        slope = sp.csr_matrix((a * (mean_dt[edges.rows] - dt), edges.cols, edges.indptr),
                              shape=mat.shape)
        g_rate = np.einsum("ij,ij->i", g, slope @ dense.data).reshape(rate.data.shape)
        return g_rate, mat.T @ g

    return _make(mat @ dense.data, (rate, dense), backward)
