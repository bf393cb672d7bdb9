import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree

from anosov_rigidity.linearize import ComposedConjugacy
from anosov_rigidity.maps import AnosovMap, Shear
from anosov_rigidity.periodic import (build_weighted_measure, check_periodic_data_matching,
                                      enumerate_fixed_points, refine_newton)
from anosov_rigidity.torus import torus_distances

from oracles import cat_eigen, fixed_point_count_rows

CAT = ((2, 1), (1, 1))
F0 = AnosovMap.cat(0.0)
F = AnosovMap.cat(0.05)
PSI = (Shear("horizontal", 0.03, 1), Shear("vertical", 0.03, 1))


def test_linear_points_are_lattice_points():
    pts = enumerate_fixed_points(F0, 4)
    assert [len(enumerate_fixed_points(F0, n)) for n in range(1, 5)] == [1, 5, 16, 45]
    num = np.array([p.point.as_array() for p in pts]) * 45
    assert np.abs(num - np.rint(num)).max() < 1e-9


def test_origin_only_fixed_point():
    pts = enumerate_fixed_points(F, 1)
    assert len(pts) == 1 and pts[0].point.as_array().tolist() == [0.0, 0.0]


def test_period_six_count():
    assert len(enumerate_fixed_points(F, 6)) == fixed_point_count_rows(CAT, 6)


@settings(deadline=None, max_examples=8)
@given(st.floats(-0.12, 0.12), st.integers(1, 6))
def test_count_invariance(eps, n):
    assert len(enumerate_fixed_points(AnosovMap.cat(eps), n)) == fixed_point_count_rows(CAT, n)


@pytest.mark.slow
def test_count_invariance_long_periods():
    for n in (11, 12):
        pts = enumerate_fixed_points(F, n, threads=4)
        assert len(pts) == fixed_point_count_rows(CAT, n)


def test_point_invariants():
    for p in enumerate_fixed_points(F, 5):
        assert p.residual < 1e-11
        assert p.Du > 1 > p.Ds > 0


def test_jacobians_match_orbit_derivative():
    # dual route: eigenvalues of the product of Df along the orbit
    for p in enumerate_fixed_points(F, 4)[::7]:
        x = p.point.as_array()
        J = np.eye(2)
        for _ in range(4):
            J = F.derivative_array(x) @ J
            x = F.apply(x)
        ev = np.sort(np.abs(np.linalg.eigvals(J)))
        assert p.Du == pytest.approx(ev[1], rel=1e-9)
        assert p.Ds == pytest.approx(ev[0], rel=1e-9)


def test_refine_linear_seed_is_fixed():
    p = enumerate_fixed_points(F0, 3)[5]
    q = refine_newton(F0, p.point.as_array(), 3)
    assert q.iterations == 0
    assert torus_distances(q.point.as_array(), p.point.as_array()) < 1e-15


def test_refine_period_two_quickly():
    for seed in enumerate_fixed_points(F0, 2):
        q = refine_newton(F, seed.point.as_array(), 2)
        assert q.residual < 1e-12 and q.iterations <= 8


def test_basin_stability():
    rng = np.random.default_rng(6)
    for p in enumerate_fixed_points(F, 5)[::11]:
        x = p.point.as_array()
        q = refine_newton(F, x + 1e-4 * rng.normal(size=2), 5)
        assert torus_distances(q.point.as_array(), x) < 1e-10


def test_orbit_closure_and_cyclic_invariance():
    pts = enumerate_fixed_points(F, 5)
    arr = np.array([p.point.as_array() for p in pts])
    tree = cKDTree(arr, boxsize=1.0)
    for p in pts[::9]:
        x = p.point.as_array()
        for _ in range(5):
            x = F.apply(x)
            d, i = tree.query(x % 1.0)
            assert d < 1e-10
            assert pts[i].Du == pytest.approx(p.Du, rel=1e-9)


def test_linear_weights_uniform():
    lam = cat_eigen()[0]
    mu = build_weighted_measure(F0, 5)
    assert np.allclose(mu.weights, 1 / mu.count, rtol=1e-12)
    assert mu.Z == pytest.approx(mu.count * lam ** -5, rel=1e-12)


def test_weights_normalized_and_bounded():
    mu = build_weighted_measure(F, 5)
    assert abs(math.fsum(mu.weights) - 1) < 1e-12
    assert (mu.weights > 0).all()
    g = (np.arange(400) + 0.5) / 400
    grid = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    lu = F.log_unstable_jacobian(grid)
    osc = float(lu.max() - lu.min())
    ratio = mu.weights.max() / mu.weights.min()
    assert ratio < math.exp(5 * osc) and ratio < 10


def test_constant_integrates_exactly():
    assert build_weighted_measure(F, 7).integrate(lambda p: np.ones(p.shape[0])) == 1.0


def test_threads_deterministic():
    a = build_weighted_measure(F, 7, threads=1)
    b = build_weighted_measure(F, 7, threads=4)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)


def test_matching_identity():
    rep = check_periodic_data_matching(F, F, None, 5)
    assert rep.max_unstable_deviation < 1e-10 and rep.max_stable_deviation < 1e-10


def test_matching_smooth_conjugate():
    g = F.conjugate(PSI)
    h = ComposedConjugacy.between(F, g)
    for n in (1, 3, 6):
        assert check_periodic_data_matching(F, g, h.evaluate, n).within(1e-7)


def test_matching_fails_without_conjugate_data():
    h = ComposedConjugacy.between(F0, F)
    rep = check_periodic_data_matching(F0, F, h.evaluate, 3)
    assert rep.max_unstable_deviation > 1e-3
    assert not rep.within(1e-7)
