"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations needed by the convolutional-attention network and the
distillation losses are provided: conv2d, batchnorm2d, maxpool2d, linear,
relu, tempered (log-)softmax, and the usual elementwise/reduction glue.
Graphs are built eagerly; ``Tensor.backward()`` walks the graph in reverse
topological order and accumulates gradients.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "BatchNormState",
    "ShapeError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "linear",
    "conv2d",
    "batchnorm2d",
    "maxpool2d",
    "relu",
    "softmax_t",
    "log_softmax_t",
    "attention_weights",
    "pick",
    "concat",
    "pad2d",
    "reshape",
    "transpose",
    "tsum",
    "tmean",
    "exp",
    "log",
]


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (e.g. teacher inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d float64 value, optionally a node in a reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_g")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._g = None  # transient per-backward-pass buffer

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accum(self, g, own=False):
        # ``own=True`` means the caller hands over a freshly allocated array
        # that we may keep without copying
        if self._g is None:
            self._g = g if own else g.copy()
        else:
            self._g += g

    def backward(self):
        """Populate grads of every requires_grad tensor reachable from self.

        Repeated calls without ``zero_grad`` accumulate. The loss must be a
        scalar (size-1) tensor.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        # a node's _g is complete once all its consumers have run, i.e. just
        # before its own _backward fires; folding into .grad right after keeps
        # peak memory down while letting repeated backward calls accumulate
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node._g)
            if node.requires_grad and node._g is not None:
                if node.grad is None:
                    node.grad = node._g
                else:
                    node.grad = node.grad + node._g
            node._g = None

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        out._backward = bwd
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data - b.data, (a, b))
    if out.requires_grad:

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.data.shape))

        out._backward = bwd
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape), own=True)
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape), own=True)

        out._backward = bwd
    return out


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data / b.data, (a, b))
    if out.requires_grad:

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.data.shape), own=True)
            if b.requires_grad:
                b._accum(
                    _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
                    own=True,
                )

        out._backward = bwd
    return out


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)
    out = _make(y, (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                x._accum(g * y, own=True)

        out._backward = bwd
    return out


def log(x, floor=None):
    """Natural log; with ``floor`` set, inputs are clamped from below and the
    gradient is zero where the clamp was active."""
    x = _as_tensor(x)
    if floor is None:
        v = x.data
        mask = None
    else:
        v = np.maximum(x.data, floor)
        mask = x.data > floor
    out = _make(np.log(v), (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                g = g / v
                if mask is not None:
                    g = g * mask
                x._accum(g)

        out._backward = bwd
    return out


def relu(x):
    x = _as_tensor(x)
    out = _make(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0  # subgradient at 0 is 0

        def bwd(g):
            if x.requires_grad:
                x._accum(g * mask, own=True)

        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    x = _as_tensor(x)
    out = _make(x.data.reshape(shape), (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                x._accum(g.reshape(x.data.shape))

        out._backward = bwd
    return out


def transpose(x, axes):
    x = _as_tensor(x)
    out = _make(x.data.transpose(axes), (x,))
    if out.requires_grad:
        inv = np.argsort(axes)

        def bwd(g):
            if x.requires_grad:
                x._accum(g.transpose(inv))

        out._backward = bwd
    return out


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            pieces = np.split(g, splits, axis=axis)
            for t, g in zip(tensors, pieces):
                if t.requires_grad:
                    t._accum(g)

        out._backward = bwd
    return out


def pad2d(x, pads, value=0.0):
    """Pad the trailing two axes of an [N,C,H,W] tensor by (top,bottom,left,right)."""
    x = _as_tensor(x)
    top, bottom, left, right = pads
    widths = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out = _make(np.pad(x.data, widths, constant_values=value), (x,))
    if out.requires_grad:
        h, w = x.data.shape[-2:]

        def bwd(g):
            if x.requires_grad:
                x._accum(g[..., top : top + h, left : left + w])

        out._backward = bwd
    return out


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                x._accum(np.broadcast_to(g, x.data.shape).copy(), own=True)

        out._backward = bwd
    return out


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.data.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def pick(x, idx):
    """Select x[n, idx[n]] for a 2-d tensor; returns a length-N tensor."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.data.shape[0]
    rows = np.arange(n)
    out = _make(x.data[rows, idx], (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                np.add.at(buf, (rows, idx), g)
                x._accum(buf, own=True)

        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:

        def bwd(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accum(_unbroadcast(ga, a.data.shape), own=ga.shape == a.data.shape)
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accum(_unbroadcast(gb, b.data.shape), own=gb.shape == b.data.shape)

        out._backward = bwd
    return out


def linear(x, weight, bias):
    """x[N,D] @ weight[K,D].T + bias[K]."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeError(
            f"linear: input dim {x.data.shape[-1]} != weight dim {weight.data.shape[1]}"
        )
    out = _make(x.data @ weight.data.T + bias.data, (x, weight, bias))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                x._accum(g @ weight.data, own=True)
            if weight.requires_grad:
                weight._accum(g.T @ x.data, own=True)
            if bias.requires_grad:
                bias._accum(g.sum(axis=0), own=True)

        out._backward = bwd
    return out


def conv2d(x, weight, bias, padding=(0, 0)):
    """2-d cross-correlation, stride 1, symmetric zero padding.

    x: [N,C,H,W], weight: [O,C,kh,kw], bias: [O] -> [N,O,H',W'] with
    H' = H + 2*ph - kh + 1, W' = W + 2*pw - kw + 1.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d, got {x.data.ndim}-d")
    n, c, h, w = x.data.shape
    o, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ShapeError(f"conv2d: channel axis mismatch (input {c}, weight {cw})")
    if bias.data.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({o},)")
    ph, pw = padding
    oh = h + 2 * ph - kh + 1
    ow = w + 2 * pw - kw + 1
    if oh <= 0:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input {h + 2 * ph}")
    if ow <= 0:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input {w + 2 * pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    # im2col + one GEMM: cols[(c,ki,kj), (n,oh,ow)]; the column matrix is
    # rebuilt in the backward pass rather than captured, to cap peak memory

    def im2col():
        cols = np.empty((c, kh, kw, n, oh, ow))
        for ki in range(kh):
            for kj in range(kw):
                cols[:, ki, kj] = xp[:, :, ki : ki + oh, kj : kj + ow].transpose(
                    1, 0, 2, 3
                )
        return cols.reshape(c * kh * kw, n * oh * ow)

    w_row = weight.data.reshape(o, c * kh * kw)
    res = (w_row @ im2col()).reshape(o, n, oh, ow).transpose(1, 0, 2, 3).copy()
    res += bias.data[:, None, None]
    out = _make(res, (x, weight, bias))
    if out.requires_grad:

        def bwd(g):
            # g: [N,O,OH,OW]
            gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
            if bias.requires_grad:
                bias._accum(gmat.sum(axis=1), own=True)
            if weight.requires_grad:
                weight._accum((gmat @ im2col().T).reshape(weight.data.shape), own=True)
            if x.requires_grad:
                gcols = (w_row.T @ gmat).reshape(c, kh, kw, n, oh, ow)
                gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
                gview = gxp.transpose(1, 0, 2, 3)
                for ki in range(kh):
                    for kj in range(kw):
                        gview[:, :, ki : ki + oh, kj : kj + ow] += gcols[:, ki, kj]
                x._accum(gxp[:, :, ph : ph + h, pw : pw + w], own=True)

        out._backward = bwd
    return out


@dataclass
class BatchNormState:
    """Per-channel running statistics for batchnorm2d."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, momentum=0.1, eps=1e-5):
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)

    def copy(self):
        return BatchNormState(
            self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps
        )


def batchnorm2d(x, gamma, beta, state, mode):
    """Per-channel batch normalization over an [N,C,H,W] tensor.

    Train mode normalizes by batch statistics (biased variance) and updates
    ``state`` in place; eval mode uses the running statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d: mode must be 'train' or 'eval', got {mode!r}")
    n, c, h, w = x.data.shape
    eps = state.eps
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ValueError(
                "batchnorm2d: train mode needs at least 2 elements per channel "
                f"(got {m})"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        mom = state.momentum
        state.running_mean *= 1.0 - mom
        state.running_mean += mom * mean
        state.running_var *= 1.0 - mom
        state.running_var += mom * var
    else:
        mean = state.running_mean
        var = state.running_var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None, None]) * invstd[:, None, None]
    out = _make(gamma.data[:, None, None] * xhat + beta.data[:, None, None], (x, gamma, beta))
    if out.requires_grad:

        def bwd(g):
            # xhat is recomputed from the saved input to avoid holding an
            # extra activation-sized array for the whole graph lifetime
            xh = (x.data - mean[:, None, None]) * invstd[:, None, None]
            if beta.requires_grad:
                beta._accum(g.sum(axis=(0, 2, 3)), own=True)
            if gamma.requires_grad:
                gamma._accum((g * xh).sum(axis=(0, 2, 3)), own=True)
            if x.requires_grad:
                gxhat = g * gamma.data[:, None, None]
                if mode == "eval":
                    gxhat *= invstd[:, None, None]
                    x._accum(gxhat, own=True)
                else:
                    m = n * h * w
                    s1 = gxhat.sum(axis=(0, 2, 3))
                    s2 = (gxhat * xh).sum(axis=(0, 2, 3))
                    xh *= (s2 / m)[:, None, None]
                    gxhat -= xh
                    gxhat -= (s1 / m)[:, None, None]
                    gxhat *= invstd[:, None, None]
                    x._accum(gxhat, own=True)

        out._backward = bwd
    return out


def maxpool2d(x):
    """2x2 max pool, stride 2; odd trailing dims are padded with -inf.

    Backward routes the gradient to each window's argmax, first index in
    row-major window order on ties.
    """
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: input must be 4-d, got {x.data.ndim}-d")
    n, c, h, w = x.data.shape
    hp, wp = h + h % 2, w + w % 2
    xp = x.data
    if hp != h or wp != w:
        xp = np.pad(
            x.data,
            ((0, 0), (0, 0), (0, hp - h), (0, wp - w)),
            constant_values=-np.inf,
        )
    h2, w2 = hp // 2, wp // 2
    windows = (
        xp.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)
    out = _make(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0], (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                gwin = np.zeros((n, c, h2, w2, 4))
                np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
                gxp = (
                    gwin.reshape(n, c, h2, w2, 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, hp, wp)
                )
                x._accum(gxp[:, :, :h, :w])

        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# softmax family


def _log_softmax(z):
    zmax = z.max(axis=-1, keepdims=True)
    zs = z - zmax
    return zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))


def softmax_t(x, temperature=1.0):
    """Row-wise softmax of logits/temperature along the last axis."""
    if temperature <= 0:
        raise ValueError(f"softmax_t: temperature must be positive, got {temperature}")
    x = _as_tensor(x)
    y = np.exp(_log_softmax(x.data / temperature))
    out = _make(y, (x,))
    if out.requires_grad:

        def bwd(g):
            if x.requires_grad:
                dot = (g * y).sum(axis=-1, keepdims=True)
                x._accum(y * (g - dot) / temperature)

        out._backward = bwd
    return out


def log_softmax_t(x, temperature=1.0):
    """Row-wise log-softmax of logits/temperature along the last axis."""
    if temperature <= 0:
        raise ValueError(
            f"log_softmax_t: temperature must be positive, got {temperature}"
        )
    x = _as_tensor(x)
    lsm = _log_softmax(x.data / temperature)
    out = _make(lsm, (x,))
    if out.requires_grad:
        sm = np.exp(lsm)

        def bwd(g):
            if x.requires_grad:
                x._accum((g - sm * g.sum(axis=-1, keepdims=True)) / temperature)

        out._backward = bwd
    return out


def attention_weights(q, k, scale):
    """softmax(q @ k^T * scale) along the last axis, fused to avoid storing
    the raw score matrix. q, k: [..., P, d] -> [..., P, P]."""
    q, k = _as_tensor(q), _as_tensor(k)
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    scores *= scale
    # in-place softmax; scores becomes the weight matrix
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    y = scores
    out = _make(y, (q, k))
    if out.requires_grad:

        def bwd(g):
            # clobber g in place; it is discarded right after this runs
            ds = g
            ds -= (ds * y).sum(axis=-1, keepdims=True)
            ds *= y
            ds *= scale
            if q.requires_grad:
                q._accum(np.matmul(ds, k.data), own=True)
            if k.requires_grad:
                k._accum(np.matmul(np.swapaxes(ds, -1, -2), q.data), own=True)

        out._backward = bwd
    return out
