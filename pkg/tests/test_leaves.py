import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosov_rigidity.leaves import (HolonomyMap, NoCrossing, conditional_density, holonomy_derivative,
                                    holonomy_jacobian_rn, leafwise_integral, stable_holonomy,
                                    trace_stable, trace_unstable, truncation_depth)
from anosov_rigidity.linearize import LinearizingConjugacy
from anosov_rigidity.maps import AnosovMap, angle_between
from anosov_rigidity.torus import centered, torus_distances

from oracles import cat_eigen, linear_holonomy_param

F0 = AnosovMap.cat(0.0)
F = AnosovMap.cat(0.05)
X0 = np.array([0.3, 0.7])
TS = np.linspace(0.0, 1.0, 21)

unit = st.floats(0, 1, exclude_max=True, allow_nan=False)


@pytest.fixture(scope="module")
def seg():
    return trace_unstable(F, X0, 1.0)


@pytest.fixture(scope="module")
def dens(seg):
    return conditional_density(seg)


def test_linear_leaf_is_straight():
    _, _, eu, _ = cat_eigen()
    s = trace_unstable(F0, X0, 1.0)
    ref = X0 + TS[:, None] * np.array(eu)
    assert np.abs(centered(s.point(TS) - ref)).max() < 1e-12


def test_tangent_and_unit_speed(seg):
    tang = seg.tangent(TS)
    assert angle_between(tang, F.unstable_direction(seg.point(TS))).max() < 1e-8
    assert np.abs(np.linalg.norm(tang, axis=1) - 1).max() < 1e-8
    assert np.abs(centered(seg.point(0.0) - X0)).max() < 1e-14


def test_refinement_stable(seg):
    fine = trace_unstable(F, X0, 1.0, max_step=5e-4)
    assert np.abs(centered(seg.point(TS) - fine.point(TS))).max() < 1e-9


def test_forward_invariance(seg):
    # f(gamma(L)) lies on the leaf through f(x0) at arclength int D_u along gamma
    t = np.linspace(0.0, 1.0, 4001)
    du = F.unstable_jacobian(seg.point(t))
    length = float(np.sum((du[1:] + du[:-1]) / 2) * (t[1] - t[0]))
    image = trace_unstable(F, F.apply(X0), 3.0)
    assert torus_distances(image.point(length), F.apply(seg.point(1.0))) < 1e-7


def test_reverse_trace(seg):
    back = trace_unstable(F, seg.point(1.0), 1.0, -1)
    assert torus_distances(back.point(1.0), X0) < 1e-10


def test_stable_leaf_direction():
    s = trace_stable(F, X0, 0.5)
    assert angle_between(s.tangent(TS[:11] / 2), F.stable_direction(s.point(TS[:11] / 2))).max() < 1e-8


def test_bad_arguments():
    with pytest.raises(ValueError):
        trace_unstable(F, X0, 11.0)
    with pytest.raises(ValueError):
        trace_unstable(F, X0, 1.0, direction=0)


def test_linear_density_is_one():
    d = conditional_density(trace_unstable(F0, X0, 1.0))
    assert np.abs(d.at(TS) - 1).max() < 1e-14


def test_density_normalized_and_bounded(seg, dens):
    assert dens.at(0.0) == pytest.approx(1.0, abs=1e-14)
    K = dens.log_bound_constant()
    assert (dens.values > 0).all()
    assert np.all(np.abs(np.log(dens.values)) <= K * np.abs(seg.params) + 1e-12)


def test_density_symmetry_and_cocycle(seg, dens):
    t, s = TS[3:], 0.4
    assert np.abs(dens.between(t, 0.0) * dens.between(0.0, t) - 1).max() < 1e-9
    other = conditional_density(seg, base=s)
    assert np.abs(dens.at(t) - other.at(t) * dens.at(s)).max() < 1e-9


def test_density_f_invariance(seg, dens):
    image = trace_unstable(F, F.apply(X0), 3.0)
    di = conditional_density(image)
    pts = seg.point(TS)
    lhs = di.at(np.array([image.project(F.apply(p)) for p in pts]))
    rhs = dens.at(TS) * F.unstable_jacobian(X0) / F.unstable_jacobian(pts)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_density_depth_doubling(seg, dens):
    twice = conditional_density(seg, 0.0, 2 * dens.depth)
    assert np.abs(dens.at(TS) - twice.at(TS)).max() < 1e-9


def test_density_direct_product(seg, dens):
    # independent route: backward orbits of separately iterated points; 20
    # steps balance the tail (~lambda^-20) against rounding (~lambda^20 eps)
    finv = F.inverse()
    for t in (0.25, 0.8):
        x, x0 = seg.point(t), X0.copy()
        log = 0.0
        for _ in range(20):
            x, x0 = finv.apply(x), finv.apply(x0)
            log += F.log_unstable_jacobian(x0) - F.log_unstable_jacobian(x)
        assert dens.at(t) == pytest.approx(math.exp(log), rel=1e-7)


def test_linear_integral():
    s = trace_unstable(F0, X0, 1.0)
    d = conditional_density(s)
    assert leafwise_integral(s, d, 0.2, 0.9) == pytest.approx(0.7, abs=1e-12)


def test_integral_additive_and_quadrature(seg, dens):
    whole = leafwise_integral(seg, dens, 0.0, 1.0)
    assert whole == pytest.approx(leafwise_integral(seg, dens, 0.0, 0.37)
                                  + leafwise_integral(seg, dens, 0.37, 1.0), abs=1e-10)
    x, w = np.polynomial.legendre.leggauss(64)
    gl = float(np.dot(w, dens.at(0.5 * (x + 1)))) * 0.5
    assert whole == pytest.approx(gl, rel=1e-9)
    assert leafwise_integral(seg, dens, 0.6, 0.2) == pytest.approx(-leafwise_integral(seg, dens, 0.2, 0.6))
    with pytest.raises(ValueError):
        leafwise_integral(seg, dens, 0.0, 5.0)


def test_holonomy_on_segment_is_identity(seg):
    hit = stable_holonomy(F, seg.point(0.4), seg)
    assert hit.param == pytest.approx(0.4, abs=1e-12) and hit.stable_distance == 0.0


def test_linear_holonomy_closed_form():
    x0, p = np.array([0.1, 0.2]), np.array([0.4, 0.35])
    hit = stable_holonomy(F0, p, trace_unstable(F0, x0, 1.0))
    a, b = linear_holonomy_param(x0, p)
    assert hit.param == pytest.approx(a, abs=1e-10)


def test_holonomy_dual_route_linear_coordinates():
    # H_f sends stable leaves of f to stable lines, so the crossing has
    # zero stable-coordinate gap after linearization
    x0, p = np.array([0.1, 0.2]), np.array([0.4, 0.35])
    hit = stable_holonomy(F, p, trace_unstable(F, x0, 1.0))
    H = LinearizingConjugacy(F)
    _, _, eu, es = cat_eigen()
    gap = centered(H.evaluate(hit.point) - H.evaluate(p))
    binv = np.linalg.inv(np.column_stack([eu, es]))
    coords = binv @ gap
    assert abs(coords[0]) < 1e-10


def test_holonomy_naturality():
    x0, p = np.array([0.1, 0.2]), np.array([0.4, 0.35])
    target = trace_unstable(F, x0, 1.0)
    hit = stable_holonomy(F, p, target)
    image_target = trace_unstable(F, F.apply(x0), 3.0)
    mapped = stable_holonomy(F, F.apply(p), image_target)
    assert torus_distances(mapped.point, F.apply(hit.point)) < 1e-8


def test_holonomy_map_monotone():
    src = trace_unstable(F, np.array([0.4, 0.35]), 0.3)
    hol = HolonomyMap(src, trace_unstable(F, np.array([0.1, 0.2]), 1.0))
    vals = [hol(t) for t in np.linspace(0.0, 0.3, 7)]
    assert all(np.diff(vals) > 0) or all(np.diff(vals) < 0)


def test_no_crossing():
    with pytest.raises(NoCrossing):
        stable_holonomy(F, np.array([0.4, 0.35]), trace_unstable(F, np.array([0.1, 0.2]), 1e-3),
                        budget=0.1)


def test_holonomy_derivative_trivial_cases():
    x, p = np.array([0.4, 0.35]), np.array([0.1, 0.2])
    hit = stable_holonomy(F0, x, trace_unstable(F0, p, 1.0))
    assert holonomy_derivative(F0, x, hit.point) == 1.0
    assert holonomy_derivative(F, x, x) == pytest.approx(1.0, abs=1e-15)


def test_holonomy_derivative_fd():
    src = trace_unstable(F, np.array([0.4, 0.35]), 0.3)
    target = trace_unstable(F, np.array([0.1, 0.2]), 1.0)
    h = 1e-5
    for t0 in (0.05, 0.15, 0.25):
        fd = (stable_holonomy(F, src.point(t0 + h), target).param
              - stable_holonomy(F, src.point(t0 - h), target).param) / (2 * h)
        q = src.point(t0)
        d = holonomy_derivative(F, q, stable_holonomy(F, q, target).point)
        assert d == pytest.approx(fd, abs=1e-5)


def test_rn_linear_and_transport():
    s0 = trace_unstable(F0, np.array([0.4, 0.35]), 0.3)
    t0 = trace_unstable(F0, np.array([0.1, 0.2]), 1.0)
    assert holonomy_jacobian_rn(F0, s0, t0, 0.1) == pytest.approx(1.0, abs=1e-12)
    # measure transport: mu^u(hol J) = int_J rn dmu^u on a short interval J
    x = np.array([0.4, 0.35])
    target_anchor = stable_holonomy(F, x, trace_unstable(F, np.array([0.1, 0.2]), 1.0)).point
    src = trace_unstable(F, x, 0.3)
    tgt = trace_unstable(F, target_anchor, 0.6)
    sd, td = conditional_density(src), conditional_density(tgt)
    a, b = 0.1, 0.12
    ha = stable_holonomy(F, src.point(a), tgt).param
    hb = stable_holonomy(F, src.point(b), tgt).param
    lhs = leafwise_integral(tgt, td, ha, hb)
    zs = np.linspace(a, b, 9)
    rn = np.array([holonomy_jacobian_rn(F, src, tgt, z, sd, td) for z in zs])
    vals = rn * sd.at(zs)
    rhs = float(np.sum((vals[1:] + vals[:-1]) / 2) * (zs[1] - zs[0]))
    assert lhs == pytest.approx(rhs, rel=1e-5)
    logs = np.log(rn)
    lip = np.abs(np.diff(logs)).max() / (zs[1] - zs[0])
    assert math.isfinite(lip)


def test_truncation_depth_monotone():
    assert truncation_depth(F0, 1.0) == 1
    assert truncation_depth(F, 1.0, 1e-12) > truncation_depth(F, 1.0, 1e-6)


@settings(deadline=None, max_examples=10)
@given(unit, unit)
def test_density_positive_everywhere(x, y):
    s = trace_unstable(F, (x, y), 0.5)
    d = conditional_density(s)
    assert (d.at(np.linspace(0, 0.5, 11)) > 0).all()


def test_csv_dump(tmp_path, seg, dens):
    path = tmp_path / "leaf.csv"
    seg.write_csv(path, dens)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,omega" and len(lines) == seg.params.size + 1
