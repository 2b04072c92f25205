"""A small dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays laid out as (batch, channel, height, width).  Every
forward op records a closure that maps the output adjoint to the adjoints of
its inputs; :func:`backward` replays those closures in reverse topological
order.  Only the operators needed by the restoration network and its losses
are provided.

Precision follows the inputs: float32 for training, float64 for gradient
checks.  Mixed-precision graphs are not supported.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

# Non-finite forward values are treated as an error state.
CHECK_FINITE = True
_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor that always tracks gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


class no_grad:
    """Context manager that stops graph recording (inference only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _make(data, parents, backward_fn):
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError("non-finite values produced in forward pass")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Each node is visited exactly once; adjoints arriving over several paths
    are summed before being propagated further.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative post-order DFS; recursion depth would otherwise track graph depth
    order, seen = [], set()
    stack = [(loss, False)]
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

    adj = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in adj:
                adj[k] = adj[k] + pg
            else:
                adj[k] = pg


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data      # a zero divisor is reported by _make

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def scale(a, c: float):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def absolute(a):
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(x):
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))

    def bw(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        return (g * (cdf + d * pdf),)

    return _make(d * cdf, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum_all(a):
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a, axis=None, keepdims=False):
    shape = a.shape
    if axis is None:
        n = a.data.size
        out = np.asarray(a.data.mean())

        def bw(g):
            return (np.full(shape, float(g) / n, dtype=a.dtype),)

        return _make(out, (a,), bw)

    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(out, (a,), bw)


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a, axes):
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat_channels(tensors):
    tensors = list(tensors)
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw)


def slice_channels(a, start, stop):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop], (a,), bw)


def split_channels(a, sections):
    """Split along channels into ``sections`` equal parts, or at the given sizes."""
    c = a.shape[1]
    if isinstance(sections, int):
        if c % sections:
            raise ValueError(f"{c} channels do not split into {sections} equal parts")
        sizes = [c // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != c:
            raise ValueError(f"split sizes {sizes} do not add up to {c} channels")
    out, start = [], 0
    for n in sizes:
        out.append(slice_channels(a, start, start + n))
        start += n
    return out


def matmul(a, b):
    """Batched product over the two trailing dimensions (equal batch dims)."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), bw)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------------------
# normalization


def _normalize(x, axes, eps):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_bw(g, xhat, inv, axes):
    gm = g.mean(axis=axes, keepdims=True)
    gy = (g * xhat).mean(axis=axes, keepdims=True)
    return inv * (g - gm - xhat * gy)


def layer_norm(x, scale_, shift, eps=1e-5):
    """Normalize over the channel axis at every pixel, then apply (scale, shift)."""
    c = x.shape[1]
    if scale_.shape != (c,) or shift.shape != (c,):
        raise ValueError("layer_norm scale/shift must have shape (C,)")
    xhat, inv = _normalize(x.data, (1,), eps)
    s = scale_.data.reshape(1, c, 1, 1)
    out = xhat * s + shift.data.reshape(1, c, 1, 1)

    def bw(g):
        gx = _normalize_bw(g * s, xhat, inv, (1,))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, (x, scale_, shift), bw)


def instance_norm(x, eps=1e-5):
    """Normalize every (batch, channel) plane over its spatial extent."""
    xhat, inv = _normalize(x.data, (2, 3), eps)
    return _make(xhat, (x,), lambda g: (_normalize_bw(g, xhat, inv, (2, 3)),))


def l2_normalize(x, axis=-1, eps=1e-12):
    """Scale ``x`` to unit Euclidean length along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    inv = 1.0 / np.maximum(norm, eps)
    y = x.data * inv

    def bw(g):
        return (inv * (g - y * (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw)



# ---------------------------------------------------------------------------
# convolution


def _pad(x, p, mode):
    if p == 0:
        return x
    width = ((0, 0), (0, 0), (p, p), (p, p))
    return np.pad(x, width, mode="edge" if mode == "replicate" else "constant")


def _unpad(g, p, mode):
    if p == 0:
        return g
    if mode == "replicate":
        g = g.copy()
        g[:, :, p, :] += g[:, :, :p, :].sum(axis=2)
        g[:, :, -p - 1, :] += g[:, :, -p:, :].sum(axis=2)
        g[:, :, :, p] += g[:, :, :, :p].sum(axis=3)
        g[:, :, :, -p - 1] += g[:, :, :, -p:].sum(axis=3)
    return g[:, :, p:-p, p:-p]


def _out_size(n, k, stride, p):
    return (n + 2 * p - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, pad_mode="zeros"):
    """Cross-correlation of (N, C, H, W) with weights (O, C, k, k)."""
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ValueError(f"conv2d weight {weight.shape} does not fit input {x.shape}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    xp = _pad(x.data, padding, pad_mode)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wm = weight.data.reshape(o, c * k * k)
    out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (gm @ wm).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + he:stride, j:j + we:stride] += dcols[..., i, j]
            gx = _unpad(gxp, padding, pad_mode)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(np.ascontiguousarray(out), parents, bw)


def depthwise_conv2d(x, weight, bias=None, stride=1, padding=0, pad_mode="zeros"):
    """Per-channel convolution with weights (C, 1, k, k); channels never mix."""
    n, c, h, w = x.shape
    k = weight.shape[-1]
    if weight.shape != (c, 1, k, k):
        raise ValueError(f"depthwise weight {weight.shape} does not fit input {x.shape}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    xp = _pad(x.data, padding, pad_mode)
    wk = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += wk[:, i, j].reshape(1, c, 1, 1) * xp[:, :, i:i + he:stride, j:j + we:stride]
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + he, stride), slice(j, j + we, stride))
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                if gxp is not None:
                    gxp[sl] += g * wk[:, i, j].reshape(1, c, 1, 1)
        gx = None if gxp is None else _unpad(gxp, padding, pad_mode)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw)


def conv1x1(x, weight, bias=None):
    """Point-wise channel mixing; ``weight`` is (O, C) or (O, C, 1, 1)."""
    n, c, h, w = x.shape
    o = weight.shape[0]
    wm = weight.data.reshape(o, -1)
    if wm.shape[1] != c:
        raise ValueError(f"conv1x1 weight {weight.shape} does not fit input {x.shape}")
    xf = x.data.reshape(n, c, h * w)
    out = wm @ xf
    if bias is not None:
        out += bias.data.reshape(1, o, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gf = g.reshape(n, o, h * w)
        gw = (gf @ xf.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gx = (wm.T @ gf).reshape(x.shape) if x.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gf.sum(axis=(0, 2))

    return _make(out.reshape(n, o, h, w), parents, bw)


# ---------------------------------------------------------------------------
# sub-pixel rearrangement


def _shuffle(a, r):
    n, c, h, w = a.shape
    oc = c // (r * r)
    return a.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def _unshuffle(a, r):
    n, c, h, w = a.shape
    return (a.reshape(n, c, h // r, r, w // r, r)
            .transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r))


def pixel_shuffle(x, r):
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    if x.shape[1] % (r * r):
        raise ValueError(f"channels {x.shape[1]} not divisible by r^2 = {r * r}")
    return _make(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x, r):
    """(N, C, H*r, W*r) -> (N, C*r*r, H, W); exact inverse of :func:`pixel_shuffle`."""
    if x.shape[2] % r or x.shape[3] % r:
        raise ValueError(f"spatial size {x.shape[2:]} not divisible by {r}")
    return _make(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))
