"""Minimal reverse-mode automatic differentiation on numpy arrays.

Values are float64 ``Tensor`` objects by default; float32 inputs stay float32
so long training runs can trade precision for speed. Operations record their parents and a
closure that maps the output gradient to parent gradients; ``backward`` walks
the recorded graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# default for non-float inputs; float32 arrays stay float32 (used for fast training)
DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        arr = np.asarray(data)
        if arr.dtype != np.float64 and arr.dtype != np.float32:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ----------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def _raise_item(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    parents = tuple(p for p in parents)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- backward ---------------------------------------------------------------

def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf tensor that requires grad.

    Gradients accumulate across calls; reset with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def power(a, exponent: float):
    a = as_tensor(a)
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(z):
    # 0.5 * (1 + tanh(z / 2)): stable for any z, fewer passes than expit
    out = np.multiply(z, 0.5)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a):
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s

    def bw(g):
        # d/dx x*s(x) = s + x*s*(1-s) = s * (1 + x - out)
        d = a.data - out
        d += 1.0
        d *= s
        d *= g
        return (d,)

    return _make(out, (a,), bw)


def leaky_relu(a, negative_slope=0.2):
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, negative_slope)
    return _make(a.data * slope, (a,), lambda g: (g * slope,))


# -- reductions and shape ---------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def pad_time(a, left, right=0):
    """Zero-pad along the second-to-last (time) axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[-2] = (left, right)
    out = np.pad(a.data, widths)
    n = a.shape[-2]
    return _make(out, (a,), lambda g: (g[..., left:left + n, :],))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    """``a @ b`` with ``b`` two-dimensional; leading dims of ``a`` are batch."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[1])

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis; weight is out x in."""
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def spmm(m, x):
    """Apply a (sparse) matrix along the node axis: ``out[..., i, :] = sum_j m[i, j] x[..., j, :]``.

    ``x`` has shape ``(..., n_in, c)``; ``m`` is ``n_out x n_in``.
    """
    x = as_tensor(x)
    m = sp.csr_matrix(m, dtype=x.data.dtype)
    lead, (n_in, c) = x.shape[:-2], x.shape[-2:]
    if m.shape[1] != n_in:
        raise ValueError(f"matrix has {m.shape[1]} columns, features have {n_in} nodes")
    nb = int(np.prod(lead)) if lead else 1

    def apply(mat, arr, n_src, n_dst):
        flat = np.moveaxis(arr.reshape(nb, n_src, c), 1, 0).reshape(n_src, nb * c)
        res = mat @ flat
        return np.moveaxis(res.reshape(n_dst, nb, c), 0, 1).reshape(*lead, n_dst, c)

    n_out = m.shape[0]
    out = apply(m, x.data, n_in, n_out)
    mt = m.T.tocsr()
    return _make(out, (x,), lambda g: (apply(mt, g, n_out, n_in),))


def take(a, indices, axis):
    """Gather entries of ``a`` along ``axis``; backward scatters with addition."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    axis = axis % a.ndim

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(np.take(a.data, indices, axis=axis), (a,), bw)


def segment_sum(a, segment_ids, num_segments, axis):
    """Sum slices of ``a`` along ``axis`` into ``num_segments`` buckets."""
    a = as_tensor(a)
    segment_ids = np.asarray(segment_ids)
    axis = axis % a.ndim
    shape = list(a.shape)
    shape[axis] = num_segments
    out = np.zeros(shape, dtype=a.data.dtype)
    np.add.at(np.moveaxis(out, axis, 0), segment_ids, np.moveaxis(a.data, axis, 0))
    return _make(out, (a,), lambda g: (np.take(g, segment_ids, axis=axis),))


# -- pooling along time -----------------------------------------------------

def pool_time(a, s: int, mode="avg"):
    """Non-overlapping window reduction of size ``s`` along the time axis."""
    a = as_tensor(a)
    n, c = a.shape[-2:]
    if s < 1 or n % s:
        raise ValueError(f"shrink factor {s} does not divide length {n}")
    blocks = a.data.reshape(*a.shape[:-2], n // s, s, c)
    if mode == "avg":
        out = blocks.mean(axis=-2)
        return _make(out, (a,), lambda g: (np.repeat(g, s, axis=-2) / s,))
    if mode == "max":
        arg = blocks.argmax(axis=-2)
        out = np.take_along_axis(blocks, arg[..., None, :], axis=-2)[..., 0, :]

        def bw(g):
            full = np.zeros_like(blocks)
            np.put_along_axis(full, arg[..., None, :], g[..., None, :], axis=-2)
            return (full.reshape(a.shape),)

        return _make(out, (a,), bw)
    raise ValueError(f"unknown pooling mode {mode!r}")


def upsample_time(a, s: int):
    a = as_tensor(a)
    if s < 1:
        raise ValueError("upsample factor must be >= 1")
    n, c = a.shape[-2:]
    out = np.repeat(a.data, s, axis=-2)
    return _make(out, (a,),
                 lambda g: (g.reshape(*a.shape[:-2], n, s, c).sum(axis=-2),))


# -- convolution ------------------------------------------------------------

def _conv_taps(xb, kd, f, dilation, n_out):
    """One product per tap on strided views of ``xb`` (batch, time, in)."""
    out_ch, in_ch, _ = kd.shape
    taps = np.ascontiguousarray(kd.transpose(2, 1, 0))
    out = xb[:, :n_out, :] @ taps[0]
    for i in range(1, f):
        out += xb[:, i * dilation:i * dilation + n_out, :] @ taps[i]

    def bw_parts(g3, need_k, need_x):
        gk = gx = None
        if need_k:
            gt = g3.transpose(0, 2, 1)
            gk = np.empty(kd.shape, dtype=g3.dtype)
            for i in range(f):
                gk[:, :, i] = (gt @ xb[:, i * dilation:i * dilation + n_out, :]).sum(axis=0)
        if need_x:
            back = np.ascontiguousarray(kd.transpose(2, 0, 1))
            gx = np.zeros(xb.shape, dtype=xb.dtype)
            for i in range(f):
                gx[:, i * dilation:i * dilation + n_out, :] += g3 @ back[i]
        return gk, gx

    return out, bw_parts


def _conv_cols(xb, kd, f, dilation, n_out):
    """im2col (tap-major columns) followed by a single product."""
    out_ch, in_ch, _ = kd.shape
    rows = xb.shape[0] * n_out
    if f == 1:
        cols = xb.reshape(rows, in_ch)
        k2 = kd[:, :, 0]
    else:
        cols = np.concatenate([xb[:, i * dilation:i * dilation + n_out, :] for i in range(f)],
                              axis=-1).reshape(rows, f * in_ch)
        k2 = kd.transpose(0, 2, 1).reshape(out_ch, f * in_ch)
    out = (cols @ k2.T).reshape(xb.shape[0], n_out, out_ch)

    def bw_parts(g3, need_k, need_x):
        gk = gx = None
        g2 = g3.reshape(rows, out_ch)
        if need_k:
            gk2 = (cols.T @ g2).T
            gk = gk2[:, :, None] if f == 1 else gk2.reshape(out_ch, f, in_ch).transpose(0, 2, 1)
        if need_x:
            gcols = (g2 @ k2).reshape(xb.shape[0], n_out, f, in_ch)
            if f == 1:
                gx = gcols[:, :, 0, :]
            else:
                gx = np.zeros(xb.shape, dtype=xb.dtype)
                for i in range(f):
                    gx[:, i * dilation:i * dilation + n_out, :] += gcols[:, :, i, :]
        return gk, gx

    return out, bw_parts


def conv1d(x, kernel, bias=None, dilation=1, causal=True):
    """Multi-channel 1-D convolution over the time axis.

    ``x`` is ``(..., len, in_ch)`` and ``kernel`` is ``(out_ch, in_ch, f)``.
    Tap ``i`` reads ``x[t + dilation * i]`` of the (left zero-padded, when
    causal) input, so the last tap is aligned with the output time step.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    out_ch, in_ch, f = kernel.shape
    if x.size == 0:
        raise ValueError("conv1d on empty input")
    if x.shape[-1] != in_ch:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {in_ch}")
    if f < 1 or dilation < 1:
        raise ValueError("filter width and dilation must be >= 1")
    span = dilation * (f - 1)
    lead = x.shape[:-2]
    xd = x.data
    if causal and span:
        padded = np.zeros((*lead, xd.shape[-2] + span, in_ch), dtype=xd.dtype)
        padded[..., span:, :] = xd
        xd = padded
    n_in = xd.shape[-2]
    n_out = n_in - span
    if n_out < 1:
        raise ValueError(f"input length {x.shape[-2]} shorter than kernel span {span + 1}")
    xb = xd.reshape(-1, n_in, in_ch)
    kd = kernel.data
    if bias is not None:
        bias = as_tensor(bias)
    # narrow channel counts starve the per-tap products; gather columns instead
    if f > 1 and min(in_ch, out_ch) >= 8:
        out, bw_parts = _conv_taps(xb, kd, f, dilation, n_out)
    else:
        out, bw_parts = _conv_cols(xb, kd, f, dilation, n_out)
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, n_out, out_ch)

    def bw(g):
        g3 = g.reshape(-1, n_out, out_ch)
        gb = g3.sum(axis=(0, 1)) if bias is not None and bias.requires_grad else None
        gk, gx = bw_parts(g3, kernel.requires_grad, x.requires_grad)
        if gx is not None:
            if causal and span:
                gx = gx[:, span:, :]
            gx = gx.reshape(*lead, x.shape[-2], in_ch)
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, bw)


# -- normalisation ----------------------------------------------------------

def batch_norm_train(x, gamma, beta, eps=1e-5):
    """Normalise with batch statistics over all axes but the last.

    Returns the output tensor and the (mean, biased variance) used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    x2 = x.data.reshape(-1, c)
    n = x2.shape[0]
    mean = x2.mean(axis=0)
    xc = x2 - mean
    var = np.einsum("ij,ij->j", xc, xc) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv
    out = (xhat * gamma.data)
    out += beta.data
    out = out.reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, c)
        gbeta = g2.sum(axis=0)
        ggamma = np.einsum("ij,ij->j", g2, xhat)
        gx = None
        if x.requires_grad:
            # gamma * inv / n * (n * g - sum(g) - xhat * sum(g * xhat))
            gx = xhat * ggamma
            gx += gbeta
            np.subtract(n * g2, gx, out=gx)
            gx *= gamma.data * inv / n
            gx = gx.reshape(x.shape)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw), mean, var


# -- losses -----------------------------------------------------------------

def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return tmean(diff * diff)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=int)
    lp = log_softmax(logits, axis=-1)
    return -tmean(lp[np.arange(labels.shape[0]), labels])
