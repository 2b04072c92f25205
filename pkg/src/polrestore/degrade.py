"""Forward degradation models and a synthetic polarimetric scene generator.

Three degradations are simulated on a clean quad:

* ``low_light`` -- Poisson shot noise plus Gaussian read noise, drawn
  independently for every plane.
* ``motion_blur`` -- one random trajectory kernel shared by all four planes.
* ``mosaic`` -- sampling on a 2x2 micro-polarizer layout followed by bilinear
  demosaicing, i.e. the artifact-bearing image a DoFP camera pipeline hands on.

Everything is a pure function of its inputs and seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .polar import PolarimetricParams, PolarQuad, quad_from_params

KINDS = ("low_light", "motion_blur", "mosaic")

# DoFP layout, row-major over the 2x2 cell: angle index (0:0, 1:45, 2:90, 3:135)
# [[90, 45],
#  [135, 0]]
DOFP_LAYOUT = ((2, 1), (3, 0))
# (row offset, col offset) of each angle's lattice
LATTICE_OFFSET = {0: (1, 1), 1: (0, 1), 2: (0, 0), 3: (1, 0)}

_DEFAULTS = {
    "low_light": {"photon_level": 50.0, "read_sigma": 0.01, "gain": 1.0},
    "motion_blur": {"kernel_size": 9, "trajectory_points": 4, "intensity": 0.5},
    "mosaic": {"noise": None},
}


def rng_for(seed, index=None):
    """Independent generator for ``(seed, index)`` so that per-image streams do
    not depend on processing order."""
    key = [int(seed)] if index is None else [int(seed), int(index)]
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation with its parameters and seed.

    ``params`` holds only the keys relevant to ``kind``; missing keys take the
    defaults in ``_DEFAULTS``.  For ``mosaic`` an optional ``noise`` entry
    (a nested low-light parameter dict) adds sensor noise before sampling.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unexpected parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        p = merged
        if self.kind == "low_light":
            if p["photon_level"] <= 0 or p["read_sigma"] < 0 or p["gain"] <= 0:
                raise ValueError("low_light needs photon_level > 0, read_sigma >= 0, gain > 0")
        elif self.kind == "motion_blur":
            k = p["kernel_size"]
            if int(k) != k or k % 2 == 0 or not 3 <= k <= 31:
                raise ValueError("kernel_size must be an odd integer in [3, 31]")
            if p["trajectory_points"] < 2:
                raise ValueError("trajectory_points must be >= 2")
            if not 0 <= p["intensity"] <= 1:
                raise ValueError("intensity must lie in [0, 1]")
        elif p["noise"] is not None:
            DegradationSpec("low_light", p["noise"], self.seed)

    def with_seed(self, seed):
        return DegradationSpec(self.kind, dict(self.params), seed)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))


@dataclass(frozen=True)
class BlurKernel:
    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] % 2 == 0:
            raise ValueError("kernel must be square with odd size")
        if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-6:
            raise ValueError("kernel taps must be nonnegative and sum to 1")
        object.__setattr__(self, "taps", t)

    @property
    def size(self):
        return self.taps.shape[0]

    @classmethod
    def delta(cls, size=3):
        t = np.zeros((size, size))
        t[size // 2, size // 2] = 1.0
        return cls(t)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    channels: int = 1
    regions: int = 6
    ti_gradient: float = 0.3
    dop_gradient: float = 0.3
    aop_gradient: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for n in (self.height, self.width):
            if n < 16 or n % 2:
                raise ValueError("scene dimensions must be even and >= 16")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.regions < 0:
            raise ValueError("regions must be >= 0")


# ---------------------------------------------------------------------------
# scenes


def synth_scene(spec: SceneSpec, index=None) -> PolarQuad:
    """Smooth fields plus piecewise-constant regions with sharp edges.

    TI lands in [0.05, 1], DoP in [0, 0.9], AoP in [0, pi).  With zero
    regions and zero gradient scales the scene is constant.
    """
    rng = rng_for(spec.seed, index)
    h, w, c = spec.height, spec.width, spec.channels
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")

    def smooth(scale):
        # a plane plus one low-frequency sinusoid, amplitude ~ scale
        a, b = rng.uniform(-1, 1, 2)
        fx, fy = rng.uniform(0.5, 2.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        return scale * 0.5 * (a * xx + b * yy + np.sin(np.pi * (fx * xx + fy * yy) + phase))

    tint = rng.uniform(0.7, 1.0, c) if c == 3 else np.ones(1)
    ti = rng.uniform(0.3, 0.8) + smooth(spec.ti_gradient)
    dop = rng.uniform(0.1, 0.5) + smooth(spec.dop_gradient)
    aop = rng.uniform(0, np.pi) + smooth(spec.aop_gradient)

    for _ in range(spec.regions):
        mask = _region_mask(rng, xx, yy)
        ti = np.where(mask, rng.uniform(0.05, 1.0), ti)
        dop = np.where(mask, rng.uniform(0.0, 0.9), dop)
        aop = np.where(mask, rng.uniform(0.0, np.pi), aop)

    ti = np.clip(ti, 0.05, 1.0)[None] * tint[:, None, None]
    ti = np.clip(ti, 0.05, 1.0)
    dop = np.broadcast_to(np.clip(dop, 0.0, 0.9), (c, h, w))
    aop = np.broadcast_to(np.mod(aop, np.pi), (c, h, w))
    return quad_from_params(PolarimetricParams(ti, dop, aop))


def _region_mask(rng, xx, yy):
    if rng.uniform() < 0.5:
        cx, cy = rng.uniform(-1, 1, 2)
        r = rng.uniform(0.15, 0.6)
        return (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
    # half-plane through a random point
    cx, cy = rng.uniform(-0.8, 0.8, 2)
    t = rng.uniform(0, 2 * np.pi)
    return (xx - cx) * np.cos(t) + (yy - cy) * np.sin(t) > 0


# ---------------------------------------------------------------------------
# mosaicing


def mosaic(quad: PolarQuad) -> np.ndarray:
    """Sample a quad on the DoFP layout; returns a (C, H, W) raw frame."""
    _, c, h, w = quad.planes.shape
    if h % 2 or w % 2:
        raise ValueError("mosaicing needs even height and width")
    raw = np.empty((c, h, w), dtype=quad.planes.dtype)
    for k, (oy, ox) in LATTICE_OFFSET.items():
        raw[:, oy::2, ox::2] = quad.planes[k][:, oy::2, ox::2]
    return raw


def _interp_axis(sub, n_full, offset, axis):
    # sample i of the sub-lattice sits at full-resolution position offset + 2i;
    # positions outside the lattice hull replicate the nearest edge sample
    n_sub = sub.shape[axis]
    u = (np.arange(n_full) - offset) / 2.0
    i0 = np.floor(u).astype(int)
    t = u - i0
    lo = np.clip(i0, 0, n_sub - 1)
    hi = np.clip(i0 + 1, 0, n_sub - 1)
    shape = [1] * sub.ndim
    shape[axis] = n_full
    t = t.reshape(shape)
    return np.take(sub, lo, axis=axis) * (1 - t) + np.take(sub, hi, axis=axis) * t


def demosaic_bilinear(raw: np.ndarray) -> PolarQuad:
    """Fill each angle's missing samples by separable bilinear interpolation."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 2:
        raw = raw[None]
    _, h, w = raw.shape
    if h % 2 or w % 2:
        raise ValueError("raw frame needs even height and width")
    planes = []
    for k in range(4):
        oy, ox = LATTICE_OFFSET[k]
        sub = raw[:, oy::2, ox::2]
        full = _interp_axis(_interp_axis(sub, h, oy, axis=1), w, ox, axis=2)
        planes.append(full)
    return PolarQuad(np.stack(planes))


# ---------------------------------------------------------------------------
# noise and blur


def apply_low_light(quad: PolarQuad, spec: DegradationSpec, index=None) -> PolarQuad:
    """``gain * (Poisson(photon_level * x) / photon_level + N(0, read_sigma))``,
    clamped at zero, independently for every plane and pixel."""
    if spec.kind != "low_light":
        raise ValueError(f"expected a low_light spec, got {spec.kind}")
    p = spec.params
    rng = rng_for(spec.seed, index)
    x = np.clip(quad.planes.astype(np.float64), 0, None)
    level = float(p["photon_level"])
    counts = rng.poisson(level * x)
    noisy = counts / level + rng.normal(0.0, float(p["read_sigma"]), size=x.shape)
    return PolarQuad(np.clip(p["gain"] * noisy, 0.0, None))


def generate_blur_kernel(spec: DegradationSpec, index=None) -> BlurKernel:
    """Rasterize a random polyline into a ``kernel_size`` square.

    Control points are drawn uniformly in the square, scaled by ``intensity``
    and centred on their mean; the polyline is sampled densely and each
    sample is splatted bilinearly onto the grid.
    """
    if spec.kind != "motion_blur":
        raise ValueError(f"expected a motion_blur spec, got {spec.kind}")
    p = spec.params
    size = int(p["kernel_size"])
    rng = rng_for(spec.seed, index)
    half = (size - 1) / 2.0
    pts = rng.uniform(-1, 1, size=(int(p["trajectory_points"]), 2)) * half * float(p["intensity"])
    pts -= pts.mean(axis=0)
    pts = np.clip(pts + half, 0, size - 1)

    samples = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(np.ceil(4 * np.hypot(*(b - a)))))
        t = np.linspace(0, 1, n + 1)[1:, None]
        samples.append(a + t * (b - a))
    samples = np.concatenate(samples)

    taps = np.zeros((size, size))
    y0 = np.clip(np.floor(samples[:, 0]).astype(int), 0, size - 2)
    x0 = np.clip(np.floor(samples[:, 1]).astype(int), 0, size - 2)
    fy = samples[:, 0] - y0
    fx = samples[:, 1] - x0
    np.add.at(taps, (y0, x0), (1 - fy) * (1 - fx))
    np.add.at(taps, (y0 + 1, x0), fy * (1 - fx))
    np.add.at(taps, (y0, x0 + 1), (1 - fy) * fx)
    np.add.at(taps, (y0 + 1, x0 + 1), fy * fx)
    return BlurKernel(taps / taps.sum())


def apply_motion_blur(quad: PolarQuad, kernel: BlurKernel) -> PolarQuad:
    """Convolve every plane with the same kernel, edges replicated."""
    if kernel.size > min(quad.height, quad.width):
        raise ValueError("blur kernel larger than the image")
    p = quad.planes.astype(np.float64)
    k = kernel.taps[None, None]
    return PolarQuad(ndimage.convolve(p, k, mode="nearest"))


def degrade(quad: PolarQuad, spec: DegradationSpec, index=None):
    """Apply one degradation; returns ``(degraded_quad, metadata)``."""
    meta = {"spec": spec.to_dict(), "index": index}
    if spec.kind == "low_light":
        out = apply_low_light(quad, spec, index)
    elif spec.kind == "motion_blur":
        kernel = generate_blur_kernel(spec, index)
        out = apply_motion_blur(quad, kernel)
        meta["kernel"] = kernel.taps.tolist()
    else:
        noise = spec.params.get("noise")
        if noise is not None:
            quad = apply_low_light(quad, DegradationSpec("low_light", noise, spec.seed), index)
        out = demosaic_bilinear(mosaic(quad))
    return out, meta
