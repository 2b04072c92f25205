"""Dual-domain training objective and the PSNR/SSIM evaluation suite.

Losses take angle-major tensors shaped (N, 4C, H, W): channels ``[0:C]`` are
the 0 degree plane, ``[C:2C]`` 45, ``[2C:3C]`` 90 and ``[3C:4C]`` 135.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autograd as ag
from .polar import PolarQuad, params_from_quad


@dataclass(frozen=True)
class LossConfig:
    lambda_s: float = 10.0     # Stokes-domain weight
    lambda_p: float = 0.01     # perceptual weight inside the image loss
    lambda_ri: float = 1.0     # image-consistency regularizer weight
    perceptual_enabled: bool = True
    extractor_seed: int = 0

    def __post_init__(self):
        for name in ("lambda_s", "lambda_p", "lambda_ri"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _tensor(x):
    return x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x))


def planes(quad):
    """Split an angle-major tensor into its four angle planes."""
    return ag.split_channels(_tensor(quad), 4)


def stokes_of(quad):
    """(S1, S2) tensors from an angle-major quad tensor; linear, so the loss
    graph differentiates straight through it."""
    i0, i45, i90, i135 = planes(quad)
    return ag.sub(i90, i0), ag.sub(i135, i45)


def l1_loss(a, b):
    return ag.mean(ag.absolute(ag.sub(_tensor(a), _tensor(b))))


# ---------------------------------------------------------------------------
# perceptual


@lru_cache(maxsize=8)
def _extractor(seed, in_channels, dtype_str):
    rng = np.random.default_rng(seed)
    widths = (in_channels, 8, 16, 32)
    layers = []
    for cin, cout in zip(widths[:-1], widths[1:]):
        w = rng.standard_normal((cout, cin, 3, 3)) * math.sqrt(2.0 / (cin * 9))
        layers.append(ag.Tensor(w.astype(dtype_str)))
    return tuple(layers)


def _features(x, layers):
    feats = []
    for w in layers:
        x = ag.relu(ag.conv2d(x, w, None, stride=2, padding=1))
        feats.append(x)
    return feats


def perceptual_loss(a, b, extractor_seed=0):
    """Sum over three pyramid levels of the L1 distance between features of a
    frozen, seeded random strided-conv extractor."""
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    layers = _extractor(int(extractor_seed), a.shape[1], a.dtype.str)
    total = None
    for fa, fb in zip(_features(a, layers), _features(b, layers)):
        d = l1_loss(fa, fb)
        total = d if total is None else ag.add(total, d)
    return total


# ---------------------------------------------------------------------------
# physics regularizers and composite losses


def r_i(quad):
    """Mean absolute violation of ``I_0 + I_90 = I_45 + I_135``."""
    i0, i45, i90, i135 = planes(quad)
    return l1_loss(ag.add(i0, i90), ag.add(i45, i135))


def r_s(pred_s, gt_s):
    """Cross-product alignment ``l1(S1 * S2_gt, S2 * S1_gt)``; zero whenever the
    predicted (S1, S2) is parallel to the ground truth, whatever its scale."""
    (s1, s2), (g1, g2) = pred_s, gt_s
    s1, s2, g1, g2 = map(_tensor, (s1, s2, g1, g2))
    return l1_loss(ag.mul(s1, g2), ag.mul(s2, g1))


def stokes_loss(pred_s, gt_s):
    (s1, s2), (g1, g2) = pred_s, gt_s
    return ag.add(ag.add(l1_loss(s1, g1), l1_loss(s2, g2)), r_s(pred_s, gt_s))


def image_loss(pred, gt, cfg: LossConfig = LossConfig()):
    pred, gt = _tensor(pred), _tensor(gt)
    total = None
    for pk, gk in zip(planes(pred), planes(gt)):
        term = l1_loss(pk, gk)
        if cfg.perceptual_enabled and cfg.lambda_p:
            term = ag.add(term, ag.scale(perceptual_loss(pk, gk, cfg.extractor_seed), cfg.lambda_p))
        total = term if total is None else ag.add(total, term)
    return ag.add(total, ag.scale(r_i(pred), cfg.lambda_ri))


def loss_components(pred, gt, cfg: LossConfig = LossConfig()):
    """``{"image", "stokes", "total"}`` scalar tensors with
    ``total = image + lambda_s * stokes``."""
    pred, gt = _tensor(pred), _tensor(gt)
    li = image_loss(pred, gt, cfg)
    ls = stokes_loss(stokes_of(pred), stokes_of(gt))
    return {"image": li, "stokes": ls, "total": ag.add(li, ag.scale(ls, cfg.lambda_s))}


def total_loss(pred, gt, cfg: LossConfig = LossConfig()):
    return loss_components(pred, gt, cfg)["total"]


# ---------------------------------------------------------------------------
# metrics

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def psnr(a, b, peak=1.0):
    """PSNR in dB; identical inputs return ``math.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim2d(a, b, data_range):
    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(x):
        return np.einsum("hwij,ij->hw", sliding_window_view(x, win.shape), win)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Gaussian-windowed SSIM averaged over all valid (unpadded) windows.

    Accepts (H, W) or (C, H, W); channels are scored separately and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    return float(np.mean([_ssim2d(x, y, data_range) for x, y in zip(a, b)]))


METRIC_KEYS = ("psnr_dop", "ssim_dop", "psnr_aop", "ssim_aop", "psnr_ti", "ssim_ti")


def _encode(v):
    # JSON has no infinity; identical images are reported as the string "inf"
    return "inf" if v == math.inf else v


def _decode(v):
    return math.inf if v == "inf" else v


@dataclass
class MetricReport:
    psnr_dop: float
    ssim_dop: float
    psnr_aop: float
    ssim_aop: float
    psnr_ti: float
    ssim_ti: float
    per_image: list = field(default_factory=list)

    def to_dict(self):
        d = {k: _encode(getattr(self, k)) for k in METRIC_KEYS}
        d["per_image"] = [{k: _encode(v) for k, v in row.items()} for row in self.per_image]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=False)

    @classmethod
    def from_dict(cls, d):
        kw = {k: _decode(d[k]) for k in METRIC_KEYS}
        rows = [{k: _decode(v) for k, v in row.items()} for row in d.get("per_image", [])]
        return cls(**kw, per_image=rows)


def image_metrics(pred: PolarQuad, gt: PolarQuad):
    """PSNR/SSIM of DoP, AoP and TI for one image pair.

    TI of both images is divided by the ground-truth TI maximum, DoP is used
    as is and AoP is divided by pi.  AoP is not wrapped circularly.
    """
    if pred.planes.shape != gt.planes.shape:
        raise ValueError(f"shape mismatch {pred.planes.shape} vs {gt.planes.shape}")
    pp, pg = params_from_quad(pred), params_from_quad(gt)
    peak = float(pg.ti.max()) or 1.0
    pairs = {
        "dop": (pp.dop, pg.dop),
        "aop": (pp.aop / math.pi, pg.aop / math.pi),
        "ti": (pp.ti / peak, pg.ti / peak),
    }
    out = {}
    for name, (x, y) in pairs.items():
        out[f"psnr_{name}"] = psnr(x, y, 1.0)
        out[f"ssim_{name}"] = ssim(x, y, 1.0)
    return out


def evaluate(pred, gt) -> MetricReport:
    """Score one quad pair or two equally long sequences of quads."""
    if isinstance(pred, PolarQuad):
        pred, gt = [pred], [gt]
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise ValueError("prediction and ground-truth sets differ in length")
    rows = [image_metrics(p, g) for p, g in zip(pred, gt)]
    if not rows:
        raise ValueError("nothing to evaluate")
    means = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
    return MetricReport(**means, per_image=rows)
