"""Linear-polarization physics for four-angle polarimetric images.

Conventions
-----------
* A quad stores the four polarizer angles 0, 45, 90 and 135 degrees as
  ``planes[k]`` with shape ``(channels, height, width)``.
* Malus' law uses the minus-cosine form
  ``I_a = I / 2 * (1 - p * cos(2 * (a - theta)))``.
* Angle of polarization lives in ``[0, pi)``.

All arithmetic is carried out in float64.  Colour channels are never mixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANGLES = np.deg2rad([0.0, 45.0, 90.0, 135.0])
EPS_S0 = 1e-8
_COS2A = (1.0, 0.0, -1.0, 0.0)
_SIN2A = (0.0, 1.0, 0.0, -1.0)


class PolarDomainError(ValueError):
    """Raised for physically invalid polarization inputs."""


def _as3d(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (C, H, W) or (H, W) field, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PolarQuad:
    """Four co-registered polarized images, ``planes`` shaped (4, C, H, W).

    Physically captured quads are nonnegative; restored quads coming out of a
    network may dip slightly below zero, so only finiteness is enforced here.
    """

    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes)
        if p.ndim == 3:
            p = p[:, None]
        if p.ndim != 4 or p.shape[0] != 4:
            raise ValueError(f"quad planes must be (4, C, H, W), got {p.shape}")
        if p.shape[1] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {p.shape[1]}")
        if not np.all(np.isfinite(p)):
            raise ValueError("quad contains non-finite values")
        object.__setattr__(self, "planes", p)

    @classmethod
    def from_planes(cls, i0, i45, i90, i135):
        planes = [_as3d(x) for x in (i0, i45, i90, i135)]
        if len({x.shape for x in planes}) != 1:
            raise ValueError("all four planes must share one shape")
        return cls(np.stack(planes))

    @property
    def i0(self):
        return self.planes[0]

    @property
    def i45(self):
        return self.planes[1]

    @property
    def i90(self):
        return self.planes[2]

    @property
    def i135(self):
        return self.planes[3]

    @property
    def channels(self):
        return self.planes.shape[1]

    @property
    def height(self):
        return self.planes.shape[2]

    @property
    def width(self):
        return self.planes.shape[3]

    def astype(self, dtype):
        return PolarQuad(self.planes.astype(dtype))


@dataclass(frozen=True)
class StokesMap:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        fields = [_as3d(x) for x in (self.s0, self.s1, self.s2)]
        if len({f.shape for f in fields}) != 1:
            raise ValueError("s0, s1, s2 must share one shape")
        for name, f in zip(("s0", "s1", "s2"), fields):
            object.__setattr__(self, name, f)

    @property
    def shape(self):
        return self.s0.shape

    def scaled(self, c):
        return StokesMap(self.s0 * c, self.s1 * c, self.s2 * c)


@dataclass(frozen=True)
class PolarimetricParams:
    """Total intensity, degree and angle of polarization per pixel."""

    ti: np.ndarray
    dop: np.ndarray
    aop: np.ndarray

    def __post_init__(self):
        fields = [_as3d(x) for x in (self.ti, self.dop, self.aop)]
        if len({f.shape for f in fields}) != 1:
            raise ValueError("ti, dop, aop must share one shape")
        for name, f in zip(("ti", "dop", "aop"), fields):
            object.__setattr__(self, name, f)


def malus_intensity(total_intensity, dop, aop, angle):
    """Intensity behind a linear polarizer at ``angle`` (radians).

    Works elementwise on scalars or arrays.  Raises ``PolarDomainError`` when
    ``dop`` leaves [0, 1] or the total intensity is negative.
    """
    ti = np.asarray(total_intensity, dtype=np.float64)
    p = np.asarray(dop, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise PolarDomainError("degree of polarization must lie in [0, 1]")
    if np.any(ti < 0):
        raise PolarDomainError("total intensity must be nonnegative")
    out = 0.5 * ti * (1.0 - p * np.cos(2.0 * (angle - np.asarray(aop, dtype=np.float64))))
    return out if out.ndim else float(out)


def quad_from_params(params: PolarimetricParams) -> PolarQuad:
    planes = [malus_intensity(params.ti, params.dop, params.aop, a) for a in ANGLES]
    return PolarQuad(np.stack(planes))


def stokes_from_quad(quad: PolarQuad) -> StokesMap:
    p = quad.planes.astype(np.float64)
    s0 = 2.0 * p.mean(axis=0)
    return StokesMap(s0, p[2] - p[0], p[3] - p[1])


def quad_from_stokes(stokes: StokesMap) -> PolarQuad:
    # inner product of [1/2, -cos(2a)/2, -sin(2a)/2] with (S0, S1, S2); the
    # trigonometric factors at the four angles are exactly 0 or +-1
    planes = [
        0.5 * (stokes.s0 - c * stokes.s1 - s * stokes.s2)
        for c, s in zip(_COS2A, _SIN2A)
    ]
    return PolarQuad(np.stack(planes))


def params_from_stokes(stokes: StokesMap, eps: float = EPS_S0) -> PolarimetricParams:
    """Recover (TI, DoP, AoP).  Pixels with ``s0 <= eps`` get DoP = AoP = 0."""
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    lit = s0 > eps
    dop = np.zeros_like(s0)
    np.divide(np.hypot(s1, s2), s0, out=dop, where=lit)
    aop = 0.5 * np.arctan2(s2, s1)
    aop = np.where(aop < 0, aop + np.pi, aop)
    aop = np.where(lit, aop, 0.0)
    return PolarimetricParams(s0.copy(), dop, aop)


def params_from_quad(quad: PolarQuad) -> PolarimetricParams:
    return params_from_stokes(stokes_from_quad(quad))


def average_polarized(quad: PolarQuad) -> np.ndarray:
    return quad.planes.astype(np.float64).mean(axis=0)


def consistency_residual(quad: PolarQuad) -> float:
    """Mean absolute value of ``(I_0 + I_90) - (I_45 + I_135)``."""
    p = quad.planes.astype(np.float64)
    return float(np.mean(np.abs((p[0] + p[2]) - (p[1] + p[3]))))
