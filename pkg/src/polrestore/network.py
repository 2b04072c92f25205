"""Dual-branch U-shaped restoration backbone built from CDCI units.

The image branch carries features of the four polarized planes, the Stokes
branch carries features of (S1, S2).  Each CDCI unit runs a CAFA block
(channel attention over both domains) and a CDFM block (Stokes-driven
modulation of gated image features).  The network predicts a residual that
is added to the degraded quad.

Parameters live in a flat ``dict`` of :class:`~polrestore.autograd.Parameter`
keyed by dotted names; forward functions are plain functions of
``(inputs, params, prefix)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .polar import PolarQuad

LEVELS = ("enc1", "enc2", "latent", "dec2", "dec1", "refine")
# width multiplier of each level relative to base_channels
LEVEL_SCALE = (1, 2, 4, 2, 1, 1)


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 8
    unit_counts: tuple = (4, 6, 6, 6, 4, 4)
    head_counts: tuple = (1, 2, 4, 2, 1, 1)
    cdfm_expansion: float = 2.0
    image_channels: int = 1
    bottleneck_divisor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "unit_counts", tuple(int(u) for u in self.unit_counts))
        object.__setattr__(self, "head_counts", tuple(int(h) for h in self.head_counts))
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if len(self.unit_counts) != 6 or len(self.head_counts) != 6:
            raise ValueError("unit_counts and head_counts need six entries")
        if any(u < 0 for u in self.unit_counts):
            raise ValueError("unit counts must be nonnegative")
        if self.cdfm_expansion < 1:
            raise ValueError("cdfm_expansion must be >= 1")
        if self.image_channels not in (1, 3):
            raise ValueError("image_channels must be 1 or 3")
        if self.bottleneck_divisor < 1:
            raise ValueError("bottleneck_divisor must be >= 1")
        for width, heads in zip(self.widths, self.head_counts):
            if heads < 1 or width % heads:
                raise ValueError(f"{heads} heads do not divide level width {width}")

    @property
    def widths(self):
        return tuple(self.base_channels * s for s in LEVEL_SCALE)

    @property
    def in_image(self):
        return 4 * self.image_channels

    @property
    def in_stokes(self):
        return 2 * self.image_channels

    def to_dict(self):
        d = asdict(self)
        d["unit_counts"] = list(self.unit_counts)
        d["head_counts"] = list(self.head_counts)
        return d


def _hidden(cfg, c):
    return int(round(cfg.cdfm_expansion * c))


def _mid(cfg, c):
    return max(1, c // cfg.bottleneck_divisor)


# ---------------------------------------------------------------------------
# parameter layout


def _conv(name, cout, cin, k):
    return [(f"{name}.weight", (cout, cin, k, k), "fan_in", cin * k * k),
            (f"{name}.bias", (cout,), "fan_in", cin * k * k)]


def _dwconv(name, c):
    return [(f"{name}.weight", (c, 1, 3, 3), "fan_in", 9), (f"{name}.bias", (c,), "fan_in", 9)]


def _bottleneck(name, c, m):
    return _conv(f"{name}.reduce", m, c, 1) + _conv(f"{name}.mid", m, m, 3) + _conv(f"{name}.expand", c, m, 1)


def _unit(name, c, heads, hidden, m):
    return [
        (f"{name}.ln1.scale", (c,), "one", 0), (f"{name}.ln1.shift", (c,), "zero", 0),
        *_conv(f"{name}.cafa.qkv", 3 * c, 2 * c, 1),
        *_dwconv(f"{name}.cafa.dw", 3 * c),
        (f"{name}.cafa.temperature", (heads,), "one", 0),
        *_conv(f"{name}.cafa.proj", c, c, 1),
        *_bottleneck(f"{name}.cafa.stokes", c, m),
        (f"{name}.ln2.scale", (c,), "one", 0), (f"{name}.ln2.shift", (c,), "zero", 0),
        *_conv(f"{name}.cdfm.x_in", 2 * hidden, c, 1),
        *_dwconv(f"{name}.cdfm.x_dw", 2 * hidden),
        *_conv(f"{name}.cdfm.y_in", 2 * hidden, c, 1),
        *_dwconv(f"{name}.cdfm.y_dw", 2 * hidden),
        *_conv(f"{name}.cdfm.proj", c, hidden, 1),
        *_bottleneck(f"{name}.cdfm.stokes", c, m),
    ]


def param_layout(cfg: NetworkConfig):
    """Ordered ``(name, shape, init, fan_in)`` for every learnable tensor."""
    b = cfg.base_channels
    w = cfg.widths
    layout = _conv("shallow_x", b, cfg.in_image, 3)
    layout += _conv("shallow_y", b, cfg.in_stokes, 3)
    layout += _conv("shallow_y.res1", b, b, 3) + _conv("shallow_y.res2", b, b, 3)

    def level(i):
        c = w[i]
        out = []
        for u in range(cfg.unit_counts[i]):
            out += _unit(f"{LEVELS[i]}.{u}", c, cfg.head_counts[i], _hidden(cfg, c), _mid(cfg, c))
        return out

    layout += level(0)
    layout += _conv("down1.x", 2 * b, b, 3) + _conv("down1.y", 2 * b, b, 3)
    layout += level(1)
    layout += _conv("down2.x", 4 * b, 2 * b, 3) + _conv("down2.y", 4 * b, 2 * b, 3)
    layout += level(2)
    layout += _conv("up2.x", 4 * 2 * b, 4 * b, 1) + _conv("up2.y", 4 * 2 * b, 4 * b, 1)
    layout += _conv("fuse2.x", 2 * b, 4 * b, 1) + _conv("fuse2.y", 2 * b, 4 * b, 1)
    layout += level(3)
    layout += _conv("up1.x", 4 * b, 2 * b, 1) + _conv("up1.y", 4 * b, 2 * b, 1)
    layout += _conv("fuse1.x", b, 2 * b, 1) + _conv("fuse1.y", b, 2 * b, 1)
    layout += level(4)
    layout += level(5)
    layout += [(n, s, "zero", f) for n, s, _, f in _conv("out", cfg.in_image, b, 3)]
    return layout


def init_params(cfg: NetworkConfig, seed=0, dtype=np.float32):
    """Fan-in scaled uniform init; LayerNorm scales and temperatures start at 1
    and the final projection at 0, so a fresh network is the identity restorer."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind, fan_in in param_layout(cfg):
        if kind == "fan_in":
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "one":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = ag.Parameter(data.astype(dtype), name)
    return params


def param_count(cfg: NetworkConfig) -> int:
    """Exact number of learnable scalars, summed block by block.

    * conv k x k, cin -> cout, with bias: ``cout * (cin * k * k + 1)``
    * bottleneck on width c with mid width m: ``m(c+1) + m(9m+1) + c(m+1)``
    * CAFA on width c, h heads: ``3c(2c+1) + 3c*10 + h + c(c+1) + bottleneck``
    * CDFM on width c, hidden e: ``2 * [2e(c+1) + 2e*10] + c(e+1) + bottleneck``
    * CDCI unit: CAFA + CDFM + two LayerNorms (``4c``)
    * shallow: image conv, Stokes conv and a two-conv residual block
    * resampling: per branch a stride-2 3x3 conv (c -> 2c) going down, and a
      1x1 conv (c -> 2c) before the pixel shuffle plus a 1x1 fuse conv
      (c -> c/2) going up
    * final 3x3 projection to the four angle planes
    """
    def conv(cin, cout, k):
        return cout * (cin * k * k + 1)

    def bottleneck(c):
        m = _mid(cfg, c)
        return m * (c + 1) + m * (9 * m + 1) + c * (m + 1)

    def unit(c, heads):
        e = _hidden(cfg, c)
        cafa = 3 * c * (2 * c + 1) + 3 * c * 10 + heads + c * (c + 1) + bottleneck(c)
        cdfm = 2 * (2 * e * (c + 1) + 2 * e * 10) + c * (e + 1) + bottleneck(c)
        return cafa + cdfm + 4 * c

    b = cfg.base_channels
    total = conv(cfg.in_image, b, 3) + conv(cfg.in_stokes, b, 3) + 2 * conv(b, b, 3)
    for c, n, h in zip(cfg.widths, cfg.unit_counts, cfg.head_counts):
        total += n * unit(c, h)
    total += 2 * (conv(b, 2 * b, 3) + conv(2 * b, 4 * b, 3))
    total += 2 * (conv(4 * b, 8 * b, 1) + conv(4 * b, 2 * b, 1))
    total += 2 * (conv(2 * b, 4 * b, 1) + conv(2 * b, b, 1))
    total += conv(b, cfg.in_image, 3)
    return total


# ---------------------------------------------------------------------------
# blocks


def _c(x, p, name, k=1, stride=1):
    w, b = p[f"{name}.weight"], p[f"{name}.bias"]
    if k == 1 and stride == 1:
        return ag.conv1x1(x, w, b)
    return ag.conv2d(x, w, b, stride=stride, padding=k // 2)


def _dw(x, p, name):
    return ag.depthwise_conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], padding=1)


def bottleneck_forward(y, p, name):
    """1x1 reduce, 3x3, 1x1 expand, each followed by InstanceNorm; ReLU
    between stages and after the identity shortcut."""
    t = ag.relu(ag.instance_norm(_c(y, p, f"{name}.reduce")))
    t = ag.relu(ag.instance_norm(_c(t, p, f"{name}.mid", k=3)))
    t = ag.instance_norm(_c(t, p, f"{name}.expand"))
    return ag.relu(ag.add(t, y))


def channel_attention(h, temperature, heads):
    """``V (x) softmax(K (x) Q / tau)`` per head over the channel axis.

    ``h`` holds Q, K, V stacked along channels.  Per head, Q and V are read
    as (HW x C_h) and K as (C_h x HW), so the affinity map is C_h x C_h.
    Q and K rows are scaled to unit length over the pixels first; the logits
    are then cosine similarities in [-1, 1] and do not grow with image area.
    """
    n, c3, hh, ww = h.shape
    c = c3 // 3
    ch = c // heads
    q, k, v = (ag.reshape(t, (n, heads, ch, hh * ww)) for t in ag.split_channels(h, 3))
    q, k = ag.l2_normalize(q, axis=-1), ag.l2_normalize(k, axis=-1)
    q_t = ag.permute(q, (0, 1, 3, 2))          # (n, heads, HW, ch)
    v_t = ag.permute(v, (0, 1, 3, 2))          # (n, heads, HW, ch)
    affinity = ag.matmul(k, q_t)               # (n, heads, ch, ch)
    affinity = ag.div(affinity, ag.reshape(temperature, (1, heads, 1, 1)))
    attn = ag.softmax(affinity, axis=-1)
    out = ag.matmul(v_t, attn)                 # (n, heads, HW, ch)
    return ag.reshape(ag.permute(out, (0, 1, 3, 2)), (n, c, hh, ww))


def cafa_forward(x, y, params, prefix, heads):
    """Collaborative attention: image branch attends over [X, Y] channels,
    Stokes branch is a bottleneck block."""
    h = _c(ag.concat_channels([x, y]), params, f"{prefix}.qkv")
    h = _dw(h, params, f"{prefix}.dw")
    att = channel_attention(h, params[f"{prefix}.temperature"], heads)
    x_out = ag.add(_c(att, params, f"{prefix}.proj"), x)
    y_out = bottleneck_forward(y, params, f"{prefix}.stokes")
    return x_out, y_out


def cdfm_forward(x, y, params, prefix):
    """Cross-domain modulation ``(GELU(F_g) * F_i) * F_m + F_b``.

    (F_i, F_g) come from the image features, (F_m, F_b) from the Stokes
    features through an identical 1x1 + depthwise 3x3 stack.
    """
    f_i, f_g = ag.split_channels(_dw(_c(x, params, f"{prefix}.x_in"), params, f"{prefix}.x_dw"), 2)
    f_m, f_b = ag.split_channels(_dw(_c(y, params, f"{prefix}.y_in"), params, f"{prefix}.y_dw"), 2)
    mod = ag.add(ag.mul(ag.mul(ag.gelu(f_g), f_i), f_m), f_b)
    x_out = _c(mod, params, f"{prefix}.proj")
    y_out = bottleneck_forward(y, params, f"{prefix}.stokes")
    return x_out, y_out


def cdci_forward(x, y, params, prefix, heads):
    """One CDCI unit.  Image branch: pre-LayerNorm plus residual around both
    blocks.  Stokes branch: plain feed-forward, no residual."""
    def ln(t, name):
        return ag.layer_norm(t, params[f"{prefix}.{name}.scale"], params[f"{prefix}.{name}.shift"])

    ax, y_mid = cafa_forward(ln(x, "ln1"), y, params, f"{prefix}.cafa", heads)
    x_mid = ag.add(ax, x)
    bx, y_out = cdfm_forward(ln(x_mid, "ln2"), y_mid, params, f"{prefix}.cdfm")
    return ag.add(bx, x_mid), y_out


def shallow_extract_image(quad, params):
    return _c(quad, params, "shallow_x", k=3)


def shallow_extract_stokes(s1s2, params):
    y = _c(s1s2, params, "shallow_y", k=3)
    r = _c(ag.relu(_c(y, params, "shallow_y.res1", k=3)), params, "shallow_y.res2", k=3)
    return ag.add(y, r)


def downsample(x, y, params, name):
    return (_c(x, params, f"{name}.x", k=3, stride=2),
            _c(y, params, f"{name}.y", k=3, stride=2))


def upsample(x, y, params, name):
    return (ag.pixel_shuffle(_c(x, params, f"{name}.x"), 2),
            ag.pixel_shuffle(_c(y, params, f"{name}.y"), 2))


def skip_fuse(dec_x, enc_x, dec_y, enc_y, params, name):
    return (_c(ag.concat_channels([dec_x, enc_x]), params, f"{name}.x"),
            _c(ag.concat_channels([dec_y, enc_y]), params, f"{name}.y"))


def _run_level(x, y, params, cfg, i):
    for u in range(cfg.unit_counts[i]):
        x, y = cdci_forward(x, y, params, f"{LEVELS[i]}.{u}", cfg.head_counts[i])
    return x, y


def network_forward(quad, s1s2, params, cfg: NetworkConfig):
    """Restore a degraded quad.

    Parameters
    ----------
    quad : Tensor (N, 4*c_img, H, W)
        Degraded planes, angle-major (all channels of 0 deg, then 45, ...).
    s1s2 : Tensor (N, 2*c_img, H, W)
        Degraded S1 and S2 computed from ``quad``.  H and W must be
        divisible by 4.

    Returns
    -------
    Tensor (N, 4*c_img, H, W)
        ``quad + residual``.
    """
    n, c, h, w = quad.shape
    if c != cfg.in_image:
        raise ValueError(f"quad has {c} channels, config expects {cfg.in_image}")
    if s1s2.shape != (n, cfg.in_stokes, h, w):
        raise ValueError(f"Stokes input {s1s2.shape} does not match quad {quad.shape}")
    if h % 4 or w % 4:
        raise ValueError(f"spatial size {(h, w)} must be divisible by 4")

    x = shallow_extract_image(quad, params)
    y = shallow_extract_stokes(s1s2, params)
    x1, y1 = _run_level(x, y, params, cfg, 0)
    x, y = downsample(x1, y1, params, "down1")
    x2, y2 = _run_level(x, y, params, cfg, 1)
    x, y = downsample(x2, y2, params, "down2")
    x, y = _run_level(x, y, params, cfg, 2)
    x, y = upsample(x, y, params, "up2")
    x, y = skip_fuse(x, x2, y, y2, params, "fuse2")
    x, y = _run_level(x, y, params, cfg, 3)
    x, y = upsample(x, y, params, "up1")
    x, y = skip_fuse(x, x1, y, y1, params, "fuse1")
    x, y = _run_level(x, y, params, cfg, 4)
    x, _ = _run_level(x, y, params, cfg, 5)
    return ag.add(quad, _c(x, params, "out", k=3))


# ---------------------------------------------------------------------------
# quad <-> tensor


def quad_to_array(quad: PolarQuad, dtype=np.float32):
    """(4, C, H, W) planes -> (1, 4C, H, W) angle-major array."""
    p = quad.planes
    return p.reshape(1, 4 * p.shape[1], p.shape[2], p.shape[3]).astype(dtype)


def stokes_input_array(quad_arr):
    """S1 = I90 - I0 and S2 = I135 - I45 from an angle-major (N, 4C, H, W) array."""
    i0, i45, i90, i135 = np.split(quad_arr, 4, axis=1)
    return np.concatenate([i90 - i0, i135 - i45], axis=1)


def array_to_quad(arr) -> PolarQuad:
    arr = np.asarray(arr)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError("array_to_quad expects a single image")
        arr = arr[0]
    c4, h, w = arr.shape
    return PolarQuad(arr.reshape(4, c4 // 4, h, w))


def restore(quad: PolarQuad, params, cfg: NetworkConfig) -> PolarQuad:
    """Inference helper: degraded quad in, restored quad out (no graph)."""
    dtype = next(iter(params.values())).dtype
    q = quad_to_array(quad, dtype)
    with ag.no_grad():
        out = network_forward(ag.Tensor(q), ag.Tensor(stokes_input_array(q)), params, cfg)
    return array_to_quad(out.data)
