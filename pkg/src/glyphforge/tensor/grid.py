"""Dense real grids with reverse-mode differentiation.

A Grid wraps a float32/float64 numpy array plus an optional gradient.
Differentiation is define-by-run: each op that has to be differentiated
records a node (parents + backward closure) on the produced Grid, and
`backward` replays the recorded graph in reverse topological order.
Gradients accumulate into `.grad`; calling backward twice over freshly
built graphs without zeroing grads therefore adds up (zero_grad or
`grad = None` resets). The graph is freed after backward unless
`retain_graph=True`.

Every completed operation leaves only finite values behind; a NaN/Inf
raises NumericError naming the op that produced it.
"""
from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericError, ShapeError
from . import kernels

_REAL_DTYPES = (np.float32, np.float64)
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _check_finite(arr, op):
    # cheap first pass: a NaN/Inf anywhere poisons the sum
    s = arr.sum()
    if not np.isfinite(s):
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values produced by op '{op}'")


class _Node:
    __slots__ = ("parents", "backward", "op")

    def __init__(self, parents, backward, op):
        self.parents = parents
        self.backward = backward
        self.op = op


class Grid:
    """N-dimensional real array, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _REAL_DTYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        _check_finite(self.data, "construct")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None

    # -- structural helpers -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Grid(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def detach(self):
        """A new leaf sharing this Grid's values, cut from the graph."""
        out = Grid.__new__(Grid)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._ctx = None
        return out

    def copy(self, requires_grad=None):
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Grid(self.data.copy(), requires_grad=rg)

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar grid of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_grid(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, retain_graph=False):
        backward(self, retain_graph=retain_graph)


def _as_grid(x, dtype=None):
    if isinstance(x, Grid):
        return x
    return Grid(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _result(data, parents, backward_fn, op):
    """Wrap op output, taping it when a parent needs gradients."""
    out = Grid.__new__(Grid)
    out.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
    _check_finite(out.data, op)
    out.grad = None
    needs = _grad_enabled and any(p.requires_grad or p._ctx is not None for p in parents)
    out.requires_grad = needs
    out._ctx = _Node(tuple(parents), backward_fn, op) if needs else None
    return out


def _accumulate(grid, g):
    if grid.grad is None:
        grid.grad = np.array(g, dtype=grid.data.dtype, copy=True)
    else:
        grid.grad += g


def backward(loss, retain_graph=False):
    """Populate .grad of every reachable requires_grad Grid from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    # iterative topological order over the recorded graph
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or node._ctx is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._ctx.parents:
            if p._ctx is not None and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad and loss._ctx is None:
        _accumulate(loss, grads[id(loss)])
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._ctx.backward(g)
        for p, pg in zip(node._ctx.parents, parent_grads):
            if pg is None:
                continue
            if p._ctx is not None:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            elif p.requires_grad:  # leaf: retain the gradient
                _accumulate(p, pg)
        if not retain_graph:
            node._ctx = None
    if not retain_graph:
        loss._ctx = None


# -- elementwise arithmetic --------------------------------------------------

def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    """Wrap raw operands as Grids, matching the dtype of the Grid operand."""
    if isinstance(a, Grid):
        return a, _as_grid(b, a.dtype)
    b = _as_grid(b)
    return _as_grid(a, b.dtype), b


def add(a, b):
    a, b = _pair(a, b)
    data = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), back, "add")


def sub(a, b):
    a, b = _pair(a, b)
    data = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(data, (a, b), back, "sub")


def mul(a, b):
    if not isinstance(b, Grid) and np.isscalar(b):
        return scale(_as_grid(a), float(b))
    if not isinstance(a, Grid) and np.isscalar(a):
        return scale(_as_grid(b), float(a))
    a, b = _pair(a, b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(data, (a, b), back, "mul")


def scale(a, s):
    a = _as_grid(a)
    s = float(s)
    data = a.data * s

    def back(g):
        return (g * s,)

    return _result(data, (a,), back, "scale")


def grid_sum(a, axis=None, keepdims=False):
    a = _as_grid(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(a.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(a.data.dtype, copy=True),)

    return _result(np.asarray(data), (a,), back, "sum")


def grid_mean(a, axis=None, keepdims=False):
    a = _as_grid(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return scale(grid_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def astype(a, dtype):
    """Dtype cast that keeps the graph connected."""
    a = _as_grid(a)
    dtype = np.dtype(dtype)
    if a.data.dtype == dtype:
        return a
    data = a.data.astype(dtype)

    def back(g):
        return (g.astype(a.data.dtype),)

    return _result(data, (a,), back, "astype")


def reshape(a, shape):
    a = _as_grid(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def back(g):
        return (g.reshape(old),)

    return _result(data, (a,), back, "reshape")


def transpose(a, axes):
    a = _as_grid(a)
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def back(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result(data, (a,), back, "transpose")


def concat(grids, axis=0):
    grids = [_as_grid(g) for g in grids]
    data = np.concatenate([g.data for g in grids], axis=axis)
    sizes = [g.data.shape[axis] for g in grids]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(data, tuple(grids), back, "concat")


# -- nonlinearities and normalization ----------------------------------------

def silu(a):
    """x * sigmoid(x), the smooth gate used throughout the model blocks."""
    a = _as_grid(a)
    # exponent clamp: sigmoid saturates exactly past +-60, avoids fp32 overflow
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60.0, 60.0)))
    data = a.data * sig
    xd = a.data

    def back(g):
        return (g * (sig * (1.0 + xd * (1.0 - sig))),)

    return _result(data, (a,), back, "silu")


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Per-sample group normalization over [N,C,H,W] with per-channel affine."""
    x = _as_grid(x)
    n, c, h, w = x.data.shape
    if c % groups:
        raise ShapeError(f"channel axis {c} not divisible by {groups} groups")
    xg = x.data.reshape(n, groups, c // groups, h, w)
    mu = xg.mean(axis=(2, 3, 4), keepdims=True)
    var = xg.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    gd = gamma.data.reshape(1, c, 1, 1)
    data = xhat * gd + beta.data.reshape(1, c, 1, 1)
    m = (c // groups) * h * w

    def back(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gd).reshape(n, groups, c // groups, h, w)
        xh = xhat.reshape(n, groups, c // groups, h, w)
        # standard normalization backward within each group
        t1 = dxhat - dxhat.mean(axis=(2, 3, 4), keepdims=True)
        t2 = xh * (dxhat * xh).sum(axis=(2, 3, 4), keepdims=True) / m
        dx = (inv * (t1 - t2)).reshape(n, c, h, w)
        return dx, dgamma.astype(gamma.data.dtype), dbeta.astype(beta.data.dtype)

    return _result(data, (x, gamma, beta), back, "group_norm")


# -- convolution and resampling ----------------------------------------------

def conv2d(x, kernel, stride=1, pad=0):
    """Cross-correlation of [N,Cin,H,W] (or [Cin,H,W]) with [Cout,Cin,k,k].

    Gradients flow to both the input and the kernel. The window gather and
    scatter run on the selected kernel backend; the contraction itself is a
    BLAS matmul in either lane.
    """
    x = _as_grid(x)
    kernel = _as_grid(kernel, x.dtype)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be [N,C,H,W] or [C,H,W], got {x.data.shape}")
    wd = kernel.data
    if wd.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [Cout,Cin,kh,kw], got {wd.shape}")
    n, cin, h, w = xd.shape
    cout, cin_k, kh, kw = wd.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {kh}x{kw}")
    if cin_k != cin:
        raise ShapeError(
            f"conv2d channel axis mismatch: input axis 1 has {cin}, kernel axis 1 has {cin_k}"
        )
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, k={kh}, pad={pad}")

    if pad:
        xp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=xd.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = xd
    else:
        xp = np.ascontiguousarray(xd)
    cols = np.empty((n * oh * ow, cin * kh * kw), dtype=xd.dtype)
    kernels.im2col(xp, kh, kw, stride, oh, ow, cols)
    wr = wd.reshape(cout, -1)
    # contiguous gemm operands keep per-row results independent of row count
    y = cols @ np.ascontiguousarray(wr.T)
    data = np.ascontiguousarray(y.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    if squeeze:
        data = data[0]

    def back(g):
        gd = g[None] if squeeze else g
        gyr = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = gx = None
        if kernel.requires_grad or kernel._ctx is not None:
            gw = (np.ascontiguousarray(gyr.T) @ cols).reshape(wd.shape)
        if x.requires_grad or x._ctx is not None:
            gcols = gyr @ wr
            gxp = np.zeros_like(xp)
            kernels.col2im(np.ascontiguousarray(gcols), gxp, kh, kw, stride, oh, ow)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        return gx, gw

    return _result(data, (x, kernel), back, "conv2d")


def upsample2x(x):
    """Nearest-neighbor 2x upsampling of [N,C,H,W]; backward sum-pools 2x2."""
    x = _as_grid(x)
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    shp = x.data.shape

    def back(g):
        gr = g.reshape(*shp[:-2], shp[-2], 2, shp[-1], 2)
        return (np.ascontiguousarray(gr.sum(axis=(-3, -1))),)

    return _result(data, (x,), back, "upsample2x")


def matmul(a, b):
    a = _as_grid(a)
    b = _as_grid(b, a.dtype)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner axes disagree: {a.data.shape[1]} (a axis 1) vs {b.data.shape[0]} (b axis 0)"
        )
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def back(g):
        return g @ np.ascontiguousarray(bd.T), np.ascontiguousarray(ad.T) @ g

    return _result(data, (a, b), back, "matmul")


def embedding_mean(table, sequences):
    """Mean-pool embedding rows per sequence; empty sequences give zeros.

    table: Grid[V, D]; sequences: list of id lists. Returns Grid[len(sequences), D].
    """
    table = _as_grid(table)
    v, d = table.data.shape
    out = np.zeros((len(sequences), d), dtype=table.data.dtype)
    for i, seq in enumerate(sequences):
        if len(seq):
            ids = np.asarray(seq, dtype=np.int64)
            if ids.min() < 0 or ids.max() >= v:
                raise ShapeError(f"embedding id out of range [0,{v}) in sequence {i}")
            out[i] = table.data[ids].mean(axis=0)

    def back(g):
        gt = np.zeros_like(table.data)
        for i, seq in enumerate(sequences):
            if len(seq):
                np.add.at(gt, np.asarray(seq, dtype=np.int64), g[i] / len(seq))
        return (gt,)

    return _result(out, (table,), back, "embedding_mean")
