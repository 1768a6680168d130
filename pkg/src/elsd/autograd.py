"""Dense-grid reverse-mode differentiation on top of numpy.

Operations record themselves on the active :class:`Tape` (if any) when at least
one input requires a gradient. ``Tape.backward`` replays the records in reverse
creation order, which is a valid topological order.

Convolution-style ops use the (N, C, H, W) layout; a single grid of shape
(C, H, W) is the N == 1 case.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Grid:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Grid(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return pow(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Grid] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Grid) -> None:
        backward(self, loss)


def active_tape() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def as_grid(x) -> Grid:
    return x if isinstance(x, Grid) else Grid(x)


def _record(out: np.ndarray, parents: Sequence[Grid], fn: Callable) -> Grid:
    """Wrap ``out``; ``fn(g)`` must return one gradient (or None) per parent."""
    node = Grid(out)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        node.requires_grad = True
        node._parents = tuple(parents)
        node._backward = fn
        tape.nodes.append(node)
    return node


def backward(tape: Tape, loss: Grid) -> None:
    """Populate ``.grad`` on every grid that requires it, seeded with d(loss)/d(loss) = 1.

    Leaf gradients accumulate across calls; intermediate gradients are reset.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for n in tape.nodes:
        n.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"gradient shape {pg.shape} does not match {parent.shape}")
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=DTYPE, copy=True)
            else:
                parent.grad = parent.grad + pg


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Grid, b: Grid, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Grid:
    a, b = as_grid(a), as_grid(b)
    _check_broadcast(a, b, "add")
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Grid:
    a, b = as_grid(a), as_grid(b)
    _check_broadcast(a, b, "sub")
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Grid:
    a, b = as_grid(a), as_grid(b)
    _check_broadcast(a, b, "mul")
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Grid:
    a, b = as_grid(a), as_grid(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def pow(a, k: float) -> Grid:
    a = as_grid(a)
    k = float(k)
    return _record(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1.0),))


def exp(a) -> Grid:
    a = as_grid(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Grid:
    a = as_grid(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs(a) -> Grid:
    a = as_grid(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Grid:
    """Clamp values; the gradient is zero where clamping is active."""
    a = as_grid(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def relu(a) -> Grid:
    a = as_grid(a)
    pos = a.data > 0
    return _record(a.data * pos, (a,), lambda g: (g * pos,))


def sigmoid(a) -> Grid:
    a = as_grid(a)
    out = np.empty_like(a.data)
    p = a.data >= 0
    out[p] = 1.0 / (1.0 + np.exp(-a.data[p]))
    e = np.exp(a.data[~p])
    out[~p] = e / (1.0 + e)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Grid:
    a = as_grid(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _record(out, (a,), lambda g: (g * sig,))


def where(mask, a, b) -> Grid:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_grid(a), as_grid(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                              _unbroadcast(np.where(mask, 0.0, g), b.shape)))


# ---------------------------------------------------------------- reductions / shape

def sum(a, axis=None) -> Grid:
    a = as_grid(a)
    out = a.data.sum(axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), fn)


def mean(a, axis=None) -> Grid:
    a = as_grid(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / float(n))


def amax(a, axis: int) -> Grid:
    """Max along one axis; gradient goes to the first maximising entry."""
    a = as_grid(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def fn(g):
        d = np.zeros_like(a.data)
        np.put_along_axis(d, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (d,)

    return _record(out, (a,), fn)


def reshape(a, shape) -> Grid:
    a = as_grid(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Grid:
    a = as_grid(a)
    inv = np.argsort(axes)
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a, key) -> Grid:
    """Numpy indexing (basic or advanced); repeated indices accumulate gradient."""
    a = as_grid(a)

    def fn(g):
        d = np.zeros_like(a.data)
        np.add.at(d, key, g)
        return (d,)

    return _record(np.array(a.data[key]), (a,), fn)


def concat(grids: Sequence, axis: int = 0) -> Grid:
    grids = [as_grid(x) for x in grids]
    sizes = [x.shape[axis] for x in grids]
    try:
        out = np.concatenate([x.data for x in grids], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in grids]}") from None
    cuts = np.cumsum(sizes)[:-1]
    return _record(out, grids, lambda g: tuple(np.split(g, cuts, axis=axis)))


def matmul(a, b) -> Grid:
    a, b = as_grid(a), as_grid(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def fully_connected(v, weights, bias=None) -> Grid:
    """(N, D) @ (D, d) + (d,)."""
    v, weights = as_grid(v), as_grid(weights)
    if v.ndim != 2 or weights.ndim != 2 or v.shape[1] != weights.shape[0]:
        raise ShapeError(f"fully_connected: input {v.shape} vs weights {weights.shape}")
    out = matmul(v, weights)
    return out if bias is None else add(out, bias)


def l2_normalize(v, axis: int = -1) -> Grid:
    v = as_grid(v)
    norm = np.sqrt((v.data ** 2).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, 1e-300)
    out = v.data / norm

    def fn(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _record(out, (v,), fn)


# ---------------------------------------------------------------- spatial ops

def _as4d(x: Grid, op: str) -> Grid:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected (N, C, H, W) or (C, H, W), got {x.shape}")
    return x


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Grid:
    """Cross-correlation with zero padding. kernel: (O, C, kh, kw)."""
    x = _as4d(as_grid(x), "conv2d")
    w = as_grid(kernel)
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[1] != c:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wm = w.data.reshape(o, -1)
    out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        bias = as_grid(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wm).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, xp.shape[2], xp.shape[3], c))  # channels last
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        dcols[:, :, :, :, i, j]
            dx = dxp[:, pad:pad + h, pad:pad + wd].transpose(0, 3, 1, 2) if pad else dxp.transpose(0, 3, 1, 2)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, parents, fn)


def transpose_conv2d(x, kernel, bias=None, stride: int = 2, pad: int = 0) -> Grid:
    """Adjoint of a strided conv. kernel: (C_in, C_out, kh, kw).

    Output size is (H - 1) * stride + kh - 2 * pad.
    """
    x = _as4d(as_grid(x), "transpose_conv2d")
    w = as_grid(kernel)
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[0] != c:
        raise ShapeError(f"transpose_conv2d: input {x.shape} vs kernel {w.shape}")
    _, o, kh, kw = w.shape
    fh, fw = (h - 1) * stride + kh, (wd - 1) * stride + kw
    if fh - 2 * pad <= 0 or fw - 2 * pad <= 0:
        raise ShapeError(f"transpose_conv2d: padding {pad} too large for {x.shape}")
    xt = x.data.transpose(0, 2, 3, 1).reshape(-1, c)            # (n h w, c)
    wm = w.data.transpose(0, 2, 3, 1).reshape(c, kh * kw * o)    # (c, kh kw o)
    taps = (xt @ wm).reshape(n, h, wd, kh, kw, o)
    full = np.zeros((n, fh, fw, o))                              # channels last
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride] += taps[:, :, :, i, j]
    out = full[:, pad:fh - pad, pad:fw - pad].transpose(0, 3, 1, 2)
    if bias is not None:
        bias = as_grid(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def fn(g):
        gl = g.transpose(0, 2, 3, 1)
        gf = np.pad(gl, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else gl
        gt = np.empty((n, h, wd, kh, kw, o))
        for i in range(kh):
            for j in range(kw):
                gt[:, :, :, i, j] = gf[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride]
        gt = gt.reshape(-1, kh * kw * o)
        dx = (gt @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2) if x.requires_grad else None
        dw = (xt.T @ gt).reshape(c, kh, kw, o).transpose(0, 3, 1, 2) if w.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, parents, fn)


def depthwise_conv(x, kernel, bias=None) -> Grid:
    """Per-channel valid cross-correlation, stride 1. kernel: (C, 1, kh, kw)."""
    x = _as4d(as_grid(x), "depthwise_conv")
    w = as_grid(kernel)
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[0] != c or w.shape[1] != 1:
        raise ShapeError(f"depthwise_conv: input {x.shape} vs kernel {w.shape}")
    kh, kw = w.shape[2:]
    ho, wo = h - kh + 1, wd - kw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"depthwise_conv: input {x.shape} smaller than kernel {w.shape}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    k = w.data[:, 0]
    out = np.einsum("nchwij,cij->nchw", win, k, optimize=True)
    if bias is not None:
        bias = as_grid(bias)
        out = out + bias.data.reshape(1, c, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def fn(g):
        dw = np.einsum("nchwij,nchw->cij", win, g, optimize=True)[:, None] if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i:i + ho, j:j + wo] += g * k[None, :, i, j, None, None]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, parents, fn)


def max_pool(x, k, stride=None) -> Grid:
    """Max pooling with window ``k`` (int or (kh, kw)); ties go to the first element."""
    x = _as4d(as_grid(x), "max_pool")
    kh, kw = (k, k) if np.isscalar(k) else k
    stride = (kh, kw) if stride is None else stride
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, c, h, wd = x.shape
    ho, wo = (h - kh) // sh + 1, (wd - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"max_pool: input {x.shape} smaller than window {(kh, kw)}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], -1)[..., 0]
    rows = np.arange(ho)[:, None] * sh + arg // kw
    cols = np.arange(wo)[None, :] * sw + arg % kw

    def fn(g):
        d = np.zeros_like(x.data)
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(d, (nn[:, :, None, None], cc[:, :, None, None], rows, cols), g)
        return (d,)

    return _record(out, (x,), fn)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights, shape (n_out, n_in)."""
    f = n_out / n_in
    src = np.clip((np.arange(n_out) + 0.5) / f - 0.5, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1 - t)
    np.add.at(m, (np.arange(n_out), i1), t)
    return m


def bilinear_upsample(x, factor: int) -> Grid:
    x = _as4d(as_grid(x), "bilinear_upsample")
    _, _, h, wd = x.shape
    mh = _interp_matrix(h, h * factor)
    mw = _interp_matrix(wd, wd * factor)
    out = mh @ x.data @ mw.T
    return _record(out, (x,), lambda g: (mh.T @ g @ mw,))


def bilinear_sample(g, points, batch: int | None = None) -> Grid:
    """Sample a (C, H, W) grid at (P, 2) points given as (x, y) -> (C, P).

    Points are clamped to the grid border. Gradients flow to the grid only.
    For a 4-D grid, ``batch`` selects the image.
    """
    g = as_grid(g)
    if g.ndim == 4:
        if batch is None:
            if g.shape[0] != 1:
                raise ShapeError(f"bilinear_sample: batch index required for {g.shape}")
            batch = 0
        g = index(g, batch)
    if g.ndim != 3:
        raise ShapeError(f"bilinear_sample: expected (C, H, W), got {g.shape}")
    pts = np.asarray(points, dtype=DTYPE).reshape(-1, 2)
    c, h, w = g.shape
    x = np.clip(pts[:, 0], 0, w - 1)
    y = np.clip(pts[:, 1], 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(int), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx, ty = x - x0, y - y0
    p = len(pts)
    rows = np.repeat(np.arange(p), 4)
    cols = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], 1).ravel()
    vals = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], 1).ravel()
    m = sp.csr_matrix((vals, (rows, cols)), shape=(p, h * w))
    flat = g.data.reshape(c, h * w)
    out = np.asarray((m @ flat.T).T)
    return _record(out, (g,), lambda gr: (np.asarray((m.T @ gr.T).T).reshape(c, h, w),))


# ---------------------------------------------------------------- numerical helpers

def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``arr`` (in place)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


# ---------------------------------------------------------------- parameters / Adam

class ParamStore:
    """Named trainable grids with Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, Grid] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value) -> Grid:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        g = Grid(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self.params[name] = g
        self.m[name] = np.zeros_like(g.data)
        self.v[name] = np.zeros_like(g.data)
        self.steps[name] = 0
        return g

    def __getitem__(self, name: str) -> Grid:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, arr in state.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if self.params[k].shape != np.shape(arr):
                raise ShapeError(f"{k}: checkpoint shape {np.shape(arr)} vs model {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=DTYPE)


def adam_step(params: ParamStore, grads: dict | None = None, lr: float = 1e-3,
              betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
              names=None) -> ParamStore:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's ``.grad``; parameters without a
    gradient are left untouched. ``weight_decay`` is added to the gradient as
    an L2 term. ``names`` restricts the update to a subset.
    """
    b1, b2 = betas
    for name in (params.params if names is None else names):
        p = params.params[name]
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if weight_decay:
            g = g + weight_decay * p.data
        t = params.steps[name] + 1
        params.steps[name] = t
        m = params.m[name] = b1 * params.m[name] + (1 - b1) * g
        v = params.v[name] = b2 * params.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
    return params


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
