import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosov_rigidity.leaves import stable_holonomy, trace_unstable
from anosov_rigidity.maps import AnosovMap
from anosov_rigidity.periodic import build_weighted_measure
from anosov_rigidity.srb import (InsufficientData, Observable, RectangleOverlap, build_rectangle,
                                 conditional_vs_rectangle, default_observables,
                                 equidistribution_error, fit_rate, measured_lipschitz,
                                 mollifier_family, srb_integral, ulam_density)

from oracles import fixed_points_cosets

CAT = ((2, 1), (1, 1))
F0 = AnosovMap.cat(0.0)
F = AnosovMap.cat(0.05)
COS_X = Observable.trig([(1, 0, 1.0, 0.0)], "cos(2pi x)")
SIN_XY = Observable.trig([(1, 1, 1.0, -math.pi / 2)], "sin(2pi(x+y))")


@pytest.fixture(scope="module")
def rect():
    return build_rectangle(F, (0.1, 0.2), 0.3, 0.04)


@pytest.fixture(scope="module")
def family(rect):
    return mollifier_family(rect, 100.0)


def test_cos_integrates_to_zero():
    assert abs(srb_integral(F, COS_X).value) < 1e-12


def test_constant_integrates_to_one():
    assert srb_integral(F, Observable.constant()).value == pytest.approx(1.0, abs=1e-14)


def test_distance_integral_against_refined_grid():
    n = 4096
    c = (np.arange(n) + 0.5) / n
    c = np.minimum(c, 1 - c)
    oracle = math.fsum(math.fsum(np.hypot(cx, c)) for cx in c) / (n * n)
    r = srb_integral(F, Observable.distance_to((0.0, 0.0)))
    assert abs(r.value - oracle) < 1e-6
    assert r.error_estimate < 1e-6


def test_resolution_floor():
    with pytest.raises(ValueError):
        srb_integral(F, COS_X, grid=512)


@pytest.mark.parametrize("n", range(1, 7))
def test_constant_error_exactly_zero(n):
    assert equidistribution_error(F, Observable.constant(), n) == 0.0


@pytest.mark.parametrize("n", range(2, 11))
def test_linear_errors_are_lattice_averages(n):
    pts = fixed_points_cosets(CAT, n)
    oracle = abs(math.fsum(math.cos(2 * math.pi * float(a)) for a, _ in pts) / len(pts))
    assert abs(equidistribution_error(F0, COS_X, n) - oracle) < 1e-12


def test_odd_observable_sees_symmetric_measure():
    # f commutes with x -> -x, so every weighted periodic measure is symmetric
    for n in range(2, 9):
        mu = build_weighted_measure(F, n)
        assert abs(mu.integrate(SIN_XY)) < 1e-15


def test_odd_observable_rate_below_one():
    periods = list(range(2, 11))
    errors = [equidistribution_error(F, SIN_XY, n) for n in periods]
    assert fit_rate(periods, errors).tau < 1


def test_exact_synthetic_fit():
    ns = list(range(2, 12))
    fit = fit_rate(ns, [3 * 0.5 ** n for n in ns])
    assert fit.tau == pytest.approx(0.5, abs=1e-12)
    assert fit.C == pytest.approx(3.0, rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.tau_interval[0] <= fit.tau <= fit.tau_interval[1]


@settings(deadline=None, max_examples=60)
@given(st.lists(st.floats(0.9, 1.1), min_size=10, max_size=10))
def test_noisy_synthetic_fit(noise):
    ns = list(range(1, 11))
    fit = fit_rate(ns, [3 * 0.5 ** n * z for n, z in zip(ns, noise)])
    assert 0.45 <= fit.tau <= 0.55


def test_fit_skips_zero_errors():
    ns = list(range(2, 9))
    errors = [0.0 if n % 2 else 2 * 0.25 ** n for n in ns]
    assert fit_rate(ns, errors).tau == pytest.approx(0.25, abs=1e-12)


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        fit_rate([1, 2, 3, 4], [1, 0.5, 0.25, 0.125])
    with pytest.raises(InsufficientData):
        fit_rate(range(1, 7), [1, 0.5, 0, 0, 0, 0])


@pytest.mark.parametrize("obs", default_observables() + [
    Observable.distance_to((0.3, 0.7)),
    Observable.trig([(2, -1, 0.5, 0.3), (0, 3, 0.2, 1.0)]),
    Observable.table(np.random.default_rng(4).random((16, 12))),
], ids=lambda o: o.name)
def test_declared_lipschitz_bounds_measured(obs):
    assert measured_lipschitz(obs) <= obs.lipschitz * 1.01


def test_rectangle_corners_and_closure(rect):
    eu, es = F.linear_unstable, F.linear_stable
    assert rect.contains(rect.polygon.mean(axis=0)).all()
    assert not rect.contains(rect.polygon.mean(axis=0) + 0.1 * es).any()
    assert not rect.contains(rect.polygon.mean(axis=0) + 0.3 * eu).any()
    assert np.allclose(rect.corners[0], (0.1, 0.2))


@settings(deadline=None, max_examples=12)
@given(st.floats(0.02, 0.28), st.floats(0.002, 0.038), st.floats(0.02, 0.28), st.floats(0.002, 0.038))
def test_rectangle_closed_under_bracket(rect, u1, s1, u2, s2):
    # [p, q] for p = [u1, s1], q = [u2, s2] is the point [u1, s2]
    def point(u, s):
        leaf = trace_unstable(F, rect.stable_side.point(s), 0.5)
        return leaf.point(stable_holonomy(F, rect.base.point(u), leaf).param)

    p, q = point(u1, s1), point(u2, s2)
    assert rect.contains(np.vstack([p, q])).all()
    bracket = point(u1, s2)
    assert rect.contains(bracket).all()
    u, s = rect.holonomy_coordinates(bracket)
    assert u == pytest.approx(u1, abs=1e-9) and s == pytest.approx(s2, abs=1e-9)


def test_oversized_rectangle():
    with pytest.raises(RectangleOverlap):
        build_rectangle(F, (0.1, 0.2), 0.3, 0.2)
    with pytest.raises(ValueError):
        build_rectangle(F, (0.1, 0.2), 0.3, -0.01)


def test_linear_rectangle_gap_below_noise_floor():
    c = conditional_vs_rectangle(F0, (0.1, 0.2), 0.3, 0.2, 0.02, Observable.constant())
    assert c.gap < 2e-3


def test_mollifier_deep_interior(rect, family):
    center = rect.polygon.mean(axis=0)
    assert family.member(1.0)(center) == 1.0


def test_mollifier_outside_collar(rect, family):
    outside = rect.polygon.mean(axis=0) + 0.05 * F.linear_stable
    assert family.signed_distance(outside)[0] < -1 / family.slope
    assert family.member(0.0)(outside) == 0.0


def test_mollifier_brackets_indicator(rect, family):
    origin, e1, e2 = rect.box()
    uv = np.random.default_rng(1).uniform(-0.1, 1.1, (20_000, 2))
    pts = origin + uv[:, :1] * e1 + uv[:, 1:] * e2
    chi = rect.contains(pts).astype(float)
    assert (family.member(0.0)(pts) <= chi).all()
    assert (chi <= family.member(1.0)(pts)).all()


@settings(deadline=None, max_examples=25)
@given(st.floats(0, 1), st.floats(0, 1))
def test_mollifier_continuous_in_t(family, t, s):
    rng = np.random.default_rng(2)
    origin, e1, e2 = family.rect.box()
    pts = origin + rng.random((500, 1)) * e1 + rng.random((500, 1)) * e2
    diff = np.abs(family.member(t)(pts) - family.member(s)(pts))
    assert diff.max() <= abs(t - s) + 1e-12


def test_mollifier_lipschitz(family):
    obs = family.member(0.5)
    assert measured_lipschitz(obs, scale=1e-5) <= obs.lipschitz * 1.01


def test_collar_area_scales_with_perimeter(rect, family):
    area = family.collar_area(400_000)
    ratio = area / (rect.perimeter() / family.slope)
    assert 1 / 3 <= ratio <= 3


def test_ulam_density_close_to_one():
    rho, l1 = ulam_density(F)
    assert rho.shape == (128, 128)
    assert l1 < 0.01
