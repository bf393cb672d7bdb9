import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosov_rigidity.linearize import (ComposedConjugacy, DegenerateSample, LinearizingConjugacy,
                                       estimate_holder_exponent)
from anosov_rigidity.maps import AnosovMap, Shear
from anosov_rigidity.torus import LatticeMatrix, torus_distances

from oracles import apply_composition

F0 = AnosovMap.cat(0.0)
F = AnosovMap.cat(0.05)
PSI = (Shear("horizontal", 0.03, 1), Shear("vertical", 0.03, 1))
PSI_SPEC = [(s.axis, s.amplitude, s.frequency) for s in PSI]
G = F.conjugate(PSI)
RNG = np.random.default_rng(5)
SAMPLE = RNG.random((1000, 2))

unit = st.floats(0, 1, exclude_max=True, allow_nan=False)


def test_linear_map_has_identity_conjugacy():
    H = LinearizingConjugacy(F0)
    assert np.array_equal(H.evaluate(SAMPLE), SAMPLE)


def test_origin_is_fixed():
    assert np.abs(LinearizingConjugacy(F).evaluate_lift(np.zeros(2))).max() < 1e-15


def test_defining_equation():
    H = LinearizingConjugacy(F, tol=1e-12)
    lhs = H.evaluate(F.apply(SAMPLE))
    rhs = F0.apply(H.evaluate(SAMPLE))
    assert torus_distances(lhs, rhs).max() < 1e-9


def test_tolerance_halving():
    a = LinearizingConjugacy(F, tol=1e-10).evaluate(SAMPLE)
    b = LinearizingConjugacy(F, tol=5e-11).evaluate(SAMPLE)
    assert torus_distances(a, b).max() < 1e-9


@settings(deadline=None, max_examples=30)
@given(unit, unit, st.integers(-3, 3), st.integers(-3, 3))
def test_displacement_periodic(x, y, m, n):
    H = LinearizingConjugacy(F)
    assert np.abs(H.displacement((x, y)) - H.displacement((x + m, y + n))).max() < 1e-14


def test_identity_composition():
    h = ComposedConjugacy.between(F, F)
    assert torus_distances(h.evaluate(SAMPLE), SAMPLE).max() < 1e-10


def test_smooth_conjugacy_is_psi():
    h = ComposedConjugacy.between(F, G)
    ref = apply_composition(np.eye(2, dtype=int), [], PSI_SPEC, SAMPLE)
    assert torus_distances(h.evaluate(SAMPLE), ref).max() < 1e-8
    assert h.residual(SAMPLE).max() < 1e-8


def test_bijection_on_samples():
    h = ComposedConjugacy.between(F, G)
    back = h.reversed().evaluate(h.evaluate(SAMPLE))
    assert torus_distances(back, SAMPLE).max() < 1e-8


def test_nonlinear_pair_residual():
    h = ComposedConjugacy.between(AnosovMap.cat(0.02), AnosovMap.cat(0.08))
    assert h.residual(SAMPLE[:200]).max() < 1e-8


def test_mismatched_linear_parts():
    other = AnosovMap(LatticeMatrix(3, 1, 2, 1))
    with pytest.raises(ValueError):
        ComposedConjugacy.between(F, other)


def test_term_counts_grow_with_precision():
    coarse = LinearizingConjugacy(F, tol=1e-6).terms
    fine = LinearizingConjugacy(F, tol=1e-14).terms
    assert all(b > a for a, b in zip(coarse, fine))
    assert LinearizingConjugacy(F0).terms == (0, 0)


def test_holder_identity_and_smooth():
    a, c, _ = estimate_holder_exponent(ComposedConjugacy.between(F, F))
    assert a == pytest.approx(1.0, abs=0.01) and c == pytest.approx(1.0, rel=0.05)
    a, _, _ = estimate_holder_exponent(ComposedConjugacy.between(F, G))
    assert a == pytest.approx(1.0, abs=0.02)


def test_holder_trend_recorded():
    # the trend in eps is recorded only; the range is the checked property
    fits = [estimate_holder_exponent(ComposedConjugacy.between(F0, AnosovMap.cat(e)), dmin=1e-7, dmax=1e-3)
            for e in (0.02, 0.05, 0.08)]
    print("alpha0 by eps:", [round(a, 5) for a, _, _ in fits])
    assert all(0 < a <= 1 for a, _, _ in fits)


def test_holder_sample_checks():
    h = ComposedConjugacy.between(F, F)
    with pytest.raises(DegenerateSample):
        estimate_holder_exponent(h, pairs=50)
    with pytest.raises(DegenerateSample):
        estimate_holder_exponent(h, dmin=1e-3, dmax=1e-2)
