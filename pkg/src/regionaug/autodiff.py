"""Minimal reverse-mode autodiff over numpy arrays.

Just enough ops for the conv backbone, scoring heads, fusion head, and the
four loss terms. Convolution forward/backward run through the im2col kernels
in :mod:`regionaug.kernels`.
"""

import numpy as np

from . import kernels

PROB_EPS = 1e-7  # clamp for every log over a probability


class Tensor:
    __slots__ = ("data", "grad", "parents", "bwd", "requires_grad")

    def __init__(self, data, parents=(), bwd=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.bwd is not None and node.grad is not None:
                node.bwd(node.grad)


def param(data):
    return Tensor(data, requires_grad=True)


def const(data):
    return Tensor(data)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int, pad: int) -> Tensor:
    """x: (N,C,H,W), w: (F,C,kh,kw), b: (F,) -> (N,F,oh,ow)."""
    n, c, h, wd = x.data.shape
    f, _, kh, kw = w.data.shape
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(f, -1)
    out = np.einsum("fk,nkl->nfl", wmat, cols, optimize=True)
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = out.reshape(n, f, oh, ow) + b.data[None, :, None, None]

    def bwd(g):
        gl = g.reshape(n, f, -1)
        if w.requires_grad:
            w._accum(np.einsum("nfl,nkl->fk", gl, cols, optimize=True).reshape(w.data.shape))
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.einsum("fk,nfl->nkl", wmat, gl, optimize=True)
            x._accum(kernels.col2im(dcols, x.data.shape, kh, kw, stride, pad))

    return Tensor(out, (x, w, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def bwd(g):
        x._accum(g * mask)

    return Tensor(out, (x,), bwd)


def group_norm(x: Tensor, gain: Tensor, bias: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization of (N,C,H,W) over channel groups, then affine.

    gain/bias have shape (C,).  Statistics are computed per (sample, group),
    so the result is independent of batch composition.
    """
    n, c, h, w = x.data.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    xg = x.data.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(n, c, h, w)
    out = xhat * gain.data[None, :, None, None] + bias.data[None, :, None, None]

    def bwd(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=(0, 2, 3)))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (g * gain.data[None, :, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            dx = inv * (dxhat - m1 - xh * m2)
            x._accum(dx.reshape(n, c, h, w).astype(x.data.dtype, copy=False))

    return Tensor(out, (x, gain, bias), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: (N,Din), w: (Din,Dout), b: (Dout,)."""
    out = x.data @ w.data + b.data

    def bwd(g):
        if w.requires_grad:
            w._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))
        if x.requires_grad:
            x._accum(g @ w.data.T)

    return Tensor(out, (x, w, b), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        x._accum(np.broadcast_to(g[:, :, None, None], x.data.shape) / (h * w))

    return Tensor(out, (x,), bwd)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsample of (N,C,H,W)."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        n, c, h, w = x.data.shape
        x._accum(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return Tensor(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return Tensor(out, (a, b), bwd)


def concat(tensors, axis=1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor(out, tuple(tensors), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        x._accum(p * (g - dot))

    return Tensor(p, (x,), bwd)


def clip_log(p: Tensor) -> Tensor:
    """log of a probability clamped into [eps, 1-eps]; zero gradient outside."""
    clipped = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p.data > PROB_EPS) & (p.data < 1.0 - PROB_EPS)

    def bwd(g):
        p._accum(g * inside / clipped)

    return Tensor(np.log(clipped), (p,), bwd)


def pick(x: Tensor, rows, cols) -> Tensor:
    """Select x[rows[i], cols[i]] from a 2-D tensor -> 1-D tensor."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = x.data[rows, cols]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        x._accum(gx)

    return Tensor(out, (x,), bwd)


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx)
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accum(gx)

    return Tensor(out, (x,), bwd)


def channels_last_flat(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N, H*W*C): cell-major, channel-minor anchor ordering."""
    n, c, h, w = x.data.shape
    out = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n, -1)

    def bwd(g):
        x._accum(g.reshape(n, h, w, c).transpose(0, 3, 1, 2))

    return Tensor(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g):
        x._accum(g.reshape(x.data.shape))

    return Tensor(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    out = x.data.sum()

    def bwd(g):
        x._accum(np.broadcast_to(g, x.data.shape))

    return Tensor(out, (x,), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    out = x.data * s

    def bwd(g):
        x._accum(g * s)

    return Tensor(out, (x,), bwd)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def add_many(tensors) -> Tensor:
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def hinge_rank(scores: Tensor, confidences: np.ndarray) -> Tensor:
    """Pairwise hinge sum over (i,j) with conf_i < conf_j of max(1-(s_j-s_i), 0).

    Confidences are constants; gradient flows to the scores only.
    """
    s = scores.data
    c = np.asarray(confidences)
    m = len(c)
    total = 0.0
    grad = np.zeros_like(s)
    for i in range(m):
        for j in range(m):
            if c[i] < c[j]:
                margin = 1.0 - (s[j] - s[i])
                if margin > 0:
                    total += margin
                    grad[i] += 1.0
                    grad[j] -= 1.0

    def bwd(g):
        scores._accum(g * grad)

    return Tensor(np.asarray(total, dtype=s.dtype), (scores,), bwd)
