"""Reverse-mode automatic differentiation over numpy float64 arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced.  Calling
``backward`` on a scalar walks the tape in reverse topological order and
accumulates vector-Jacobian products into ``.grad`` buffers.  Only the
primitives this package actually needs are implemented; everything is
float64 and single-threaded, so results are bit-reproducible.

Constants short-circuit the tape: an op whose inputs all have
``requires_grad=False`` produces another constant with no parents, which
makes the same code usable as a plain numpy evaluation path.
"""

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import NumericalError, ShapeError

_CHECK_FINITE = False


@contextmanager
def finite_checks():
    """Raise NumericalError naming the op if any forward output is non-finite."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    __slots__ = ("data", "grad", "parents", "bw", "requires_grad", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = ()
        self.bw = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def backward(self, seed=None):
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
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
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        _accum(self, np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node.bw is not None and node.grad is not None:
                node.bw(node.grad)

    # -- operator sugar -----------------------------------------------------

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

    def __getitem__(self, idx):
        return index(self, idx)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data):
    """Wrap data as a constant (no gradient tracked)."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def parameter(data):
    """Wrap data as a trainable leaf."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += g


def _make(data, parents, bw, op):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by op '{op}'")
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data)
    if rg:
        out.requires_grad = True
        out.parents = tuple(parents)
        out.bw = bw
        out.op = op
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _mT(x):
    return np.swapaxes(x, -1, -2)


# -- elementwise arithmetic --------------------------------------------------


def add(a, b):
    a, b = tensor(a), tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw, "add")


def sub(a, b):
    a, b = tensor(a), tensor(b)
    out_data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw, "sub")


def mul(a, b):
    a, b = tensor(a), tensor(b)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw, "mul")


def div(a, b):
    a, b = tensor(a), tensor(b)
    out_data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bw, "div")


def neg(a):
    a = tensor(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw, "neg")


def square(a):
    a = tensor(a)

    def bw(g):
        _accum(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), bw, "square")


def exp(a):
    a = tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bw, "exp")


def log(a):
    a = tensor(a)

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw, "log")


def sqrt(a):
    a = tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bw, "sqrt")


def tanh(a):
    a = tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw, "tanh")


def softplus(a):
    """log(1 + exp(x)), computed stably."""
    a = tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def bw(g):
        _accum(a, g * expit(a.data))

    return _make(out_data, (a,), bw, "softplus")


# -- reductions and reshaping ------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), bw, "sum")


def reshape(a, shape):
    a = tensor(a)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes):
    a = tensor(a)
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def mT(a):
    """Swap the last two axes."""
    a = tensor(a)

    def bw(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), bw, "mT")


def unsqueeze(a, axis):
    a = tensor(a)

    def bw(g):
        _accum(a, np.squeeze(g, axis=axis))

    return _make(np.expand_dims(a.data, axis), (a,), bw, "unsqueeze")


def squeeze(a, axis):
    a = tensor(a)

    def bw(g):
        _accum(a, np.expand_dims(g, axis))

    return _make(np.squeeze(a.data, axis=axis), (a,), bw, "squeeze")


def index(a, idx):
    """Basic (non-fancy) indexing with gradient scatter-add."""
    a = tensor(a)

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape, dtype=np.float64)
        a.grad[idx] += g

    out = _make(a.data[idx], (a,), bw, "index")
    return out


def stack(ts, axis=0):
    ts = [tensor(t) for t in ts]
    out_data = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        gm = np.moveaxis(g, axis, 0)
        for i, t in enumerate(ts):
            _accum(t, gm[i])

    return _make(out_data, tuple(ts), bw, "stack")


def concat(ts, axis=0):
    ts = [tensor(t) for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        gm = np.moveaxis(g, axis, 0)
        for i, t in enumerate(ts):
            _accum(t, np.moveaxis(gm[bounds[i]:bounds[i + 1]], 0, axis))

    return _make(out_data, tuple(ts), bw, "concat")


def expand(a, shape):
    a = tensor(a)

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bw, "expand")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """Matrix product; both operands must have ndim >= 2.  Batch axes broadcast."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ _mT(b.data), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(_mT(a.data) @ g, b.data.shape))

    return _make(out_data, (a, b), bw, "matmul")


def tril(a):
    a = tensor(a)

    def bw(g):
        _accum(a, np.tril(g))

    return _make(np.tril(a.data), (a,), bw, "tril")


def diag_embed(v):
    """(…, d) -> (…, d, d) with v on the diagonal."""
    v = tensor(v)
    d = v.data.shape[-1]
    out_data = np.zeros(v.data.shape + (d,), dtype=np.float64)
    ii = np.arange(d)
    out_data[..., ii, ii] = v.data

    def bw(g):
        _accum(v, g[..., ii, ii])

    return _make(out_data, (v,), bw, "diag_embed")


def diag_part(a):
    """(…, d, d) -> (…, d), the diagonal of the last two axes."""
    a = tensor(a)
    d = a.data.shape[-1]
    ii = np.arange(d)

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape, dtype=np.float64)
        a.grad[..., ii, ii] += g

    return _make(a.data[..., ii, ii].copy(), (a,), bw, "diag_part")


def cholesky(a):
    """Batched lower Cholesky of (…, d, d) SPD matrices.

    The VJP is the standard expression built from triangular solves:
    with Phi(X) = tril(X) with halved diagonal,
    grad_A = sym(L^{-T} Phi(L^T grad_L) L^{-1}).
    """
    a = tensor(a)
    L = np.linalg.cholesky(a.data)
    d = L.shape[-1]
    ii = np.arange(d)

    def bw(g):
        M = _mT(L) @ g
        phi = np.tril(M)
        phi[..., ii, ii] *= 0.5
        tmp = np.linalg.solve(_mT(L), phi)          # L^{-T} phi
        S = _mT(np.linalg.solve(_mT(L), _mT(tmp)))  # (L^{-T} phi) L^{-1}
        _accum(a, 0.5 * (S + _mT(S)))

    return _make(L, (a,), bw, "cholesky")


def tri_solve(L, b, trans=False):
    """Solve L x = b (or L^T x = b when trans) with L lower triangular.

    Shapes: L (…, d, d), b (…, d, k).  Gradients flow to both arguments;
    the L gradient is masked to the lower triangle.
    """
    L, b = tensor(L), tensor(b)
    A = _mT(L.data) if trans else L.data
    x = np.linalg.solve(A, b.data)

    def bw(g):
        if trans:
            gb = np.linalg.solve(L.data, g)
            gL = -np.tril(x @ _mT(gb))
        else:
            gb = np.linalg.solve(_mT(L.data), g)
            gL = -np.tril(gb @ _mT(x))
        if L.requires_grad:
            _accum(L, _unbroadcast(gL, L.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(x, (L, b), bw, "tri_solve")
