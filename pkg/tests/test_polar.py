import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polrestore.polar import (
    PolarDomainError,
    PolarimetricParams,
    PolarQuad,
    StokesMap,
    average_polarized,
    consistency_residual,
    malus_intensity,
    params_from_stokes,
    quad_from_params,
    quad_from_stokes,
    stokes_from_quad,
)


def const_quad(*vals, shape=(1, 4, 4)):
    return PolarQuad(np.stack([np.full(shape, v) for v in vals]))


def const_params(ti, p, theta, shape=(1, 4, 4)):
    return PolarimetricParams(np.full(shape, ti), np.full(shape, p), np.full(shape, theta))


def const_stokes(s0, s1, s2, shape=(1, 4, 4)):
    return StokesMap(np.full(shape, s0), np.full(shape, s1), np.full(shape, s2))


@pytest.mark.parametrize("ti, p, theta, alpha, expected", [
    (1.0, 0.0, 1.2, 0.7, 0.5),
    (1.0, 1.0, 0.0, 0.0, 0.0),
    (2.0, 0.5, math.pi / 4, 3 * math.pi / 4, 1.5),
])
def test_malus_examples(ti, p, theta, alpha, expected):
    assert malus_intensity(ti, p, theta, alpha) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("ti, p", [(1.0, -0.1), (1.0, 1.1), (-1.0, 0.5)])
def test_malus_domain_errors(ti, p):
    with pytest.raises(PolarDomainError):
        malus_intensity(ti, p, 0.0, 0.0)


@given(st.floats(0, 5), st.floats(0, 1), st.floats(0, math.pi), st.floats(-7, 7))
def test_malus_bounded_by_total_intensity(ti, p, theta, alpha):
    v = malus_intensity(ti, p, theta, alpha)
    assert -1e-12 <= v <= ti + 1e-12


@pytest.mark.parametrize("params, planes", [
    ((1.0, 0.0, 0.0), (0.5, 0.5, 0.5, 0.5)),
    ((1.0, 1.0, 0.0), (0.0, 0.5, 1.0, 0.5)),
    ((2.0, 0.5, math.pi / 4), (1.0, 0.5, 1.0, 1.5)),
])
def test_quad_from_params_examples(params, planes):
    q = quad_from_params(const_params(*params))
    np.testing.assert_allclose(q.planes[:, 0, 0, 0], planes, atol=1e-12)


@pytest.mark.parametrize("planes, stokes", [
    ((0.5, 0.5, 0.5, 0.5), (1.0, 0.0, 0.0)),
    ((0.0, 0.5, 1.0, 0.5), (1.0, 1.0, 0.0)),
    ((1.0, 0.5, 1.0, 1.5), (2.0, 0.0, 1.0)),
])
def test_stokes_from_quad_examples(planes, stokes):
    s = stokes_from_quad(const_quad(*planes))
    np.testing.assert_allclose([s.s0[0, 0, 0], s.s1[0, 0, 0], s.s2[0, 0, 0]], stokes, atol=1e-12)
    # and the inverse map, which the same table exercises backwards
    q = quad_from_stokes(const_stokes(*stokes))
    np.testing.assert_allclose(q.planes[:, 0, 0, 0], planes, atol=1e-12)


@pytest.mark.parametrize("stokes, expected", [
    ((1.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
    ((1.0, 1.0, 0.0), (1.0, 1.0, 0.0)),
    ((2.0, 0.0, 1.0), (2.0, 0.5, math.pi / 4)),
])
def test_params_from_stokes_examples(stokes, expected):
    p = params_from_stokes(const_stokes(*stokes))
    np.testing.assert_allclose([p.ti[0, 0, 0], p.dop[0, 0, 0], p.aop[0, 0, 0]], expected, atol=1e-12)


def test_dark_pixels_get_zero_dop_and_aop():
    p = params_from_stokes(const_stokes(0.0, 0.0, 0.0))
    assert np.all(p.dop == 0) and np.all(p.aop == 0)
    p = params_from_stokes(const_stokes(1e-9, 1e-9, 0.0))
    assert np.all(p.dop == 0)


def test_aop_branch_is_half_open():
    # S2 < 0 maps into (pi/2, pi), S1 < 0 with S2 = 0 maps to exactly pi/2
    p = params_from_stokes(StokesMap(np.ones((1, 1, 3)), np.array([[[1.0, -1.0, 0.0]]]),
                                     np.array([[[-1e-3, 0.0, -1.0]]])))
    aop = p.aop[0, 0]
    assert np.all((aop >= 0) & (aop < math.pi))
    assert aop[1] == pytest.approx(math.pi / 2)
    assert aop[2] == pytest.approx(3 * math.pi / 4)


@pytest.mark.parametrize("planes, mean", [
    ((0.5, 0.5, 0.5, 0.5), 0.5),
    ((0.0, 0.5, 1.0, 0.5), 0.5),
    ((1.0, 0.5, 1.0, 1.5), 1.0),
])
def test_average_polarized(planes, mean):
    q = const_quad(*planes)
    np.testing.assert_allclose(average_polarized(q), mean)
    np.testing.assert_allclose(2 * average_polarized(q), stokes_from_quad(q).s0)


@pytest.mark.parametrize("planes, residual", [
    ((0.0, 0.0, 1.0, 0.0), 1.0),
    ((0.2, 0.3, 0.4, 0.3), 0.0),
])
def test_consistency_residual_examples(planes, residual):
    assert consistency_residual(const_quad(*planes)) == pytest.approx(residual, abs=1e-12)


def random_params(rng, n, shape=None):
    shape = shape or (1, n)
    return PolarimetricParams(rng.uniform(0, 2, shape), rng.uniform(0, 1, shape),
                              rng.uniform(0, math.pi, shape))


def test_generated_quads_are_consistent():
    q = quad_from_params(random_params(np.random.default_rng(0), 4096, (3, 32, 32)))
    assert consistency_residual(q) < 1e-7


def test_both_s0_formulas_agree():
    q = quad_from_params(random_params(np.random.default_rng(1), 2000))
    s0 = stokes_from_quad(q).s0
    np.testing.assert_allclose(s0, q.i0 + q.i90, atol=1e-6)
    np.testing.assert_allclose(s0, q.i45 + q.i135, atol=1e-6)


def test_stokes_round_trip():
    rng = np.random.default_rng(2)
    s = StokesMap(rng.uniform(0, 2, (3, 8, 8)), rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 8, 8)))
    back = stokes_from_quad(quad_from_stokes(s))
    for a, b in zip((s.s0, s.s1, s.s2), (back.s0, back.s1, back.s2)):
        np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=50)
@given(st.floats(0.01, 2), st.floats(0, 1), st.floats(0, math.pi, exclude_max=True))
def test_dop_never_exceeds_one(ti, p, theta):
    out = params_from_stokes(stokes_from_quad(quad_from_params(const_params(ti, p, theta, (1, 1, 1)))))
    assert out.dop.max() <= 1 + 1e-6


def test_channels_are_independent():
    rng = np.random.default_rng(3)
    params = random_params(rng, 0, (3, 5, 5))
    full = params_from_stokes(stokes_from_quad(quad_from_params(params)))
    for c in range(3):
        single = PolarimetricParams(params.ti[c:c + 1], params.dop[c:c + 1], params.aop[c:c + 1])
        one = params_from_stokes(stokes_from_quad(quad_from_params(single)))
        np.testing.assert_array_equal(one.dop, full.dop[c:c + 1])


def test_quad_shape_validation():
    with pytest.raises(ValueError):
        PolarQuad(np.zeros((3, 1, 4, 4)))
    with pytest.raises(ValueError):
        PolarQuad(np.zeros((4, 2, 4, 4)))
    with pytest.raises(ValueError):
        PolarQuad.from_planes(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))
