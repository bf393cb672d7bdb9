import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosov_rigidity.sft import (CylinderPotential, DimensionMismatch, NotMixing,
                                 PowerIterationStall, Sft, eigenvalue_ratio, equilibrium_state,
                                 power_iteration, symbolic_ee_experiment,
                                 symbolic_weighted_periodic_measure, theta_distance,
                                 transfer_operator_apply)

from oracles import quadratic_eigenvalues, weighted_transfer_matrix

GOLDEN = Sft.golden_mean()
PHI = (1 + math.sqrt(5)) / 2


def _mixing(A):
    try:
        Sft(A)
    except NotMixing:
        return False
    return True


mixing_matrices = st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3),
                           min_size=3, max_size=3).filter(_mixing)
golden_tables = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


def _trace(A, n):
    k = len(A)
    M = [[int(i == j) for j in range(k)] for i in range(k)]
    for _ in range(n):
        M = [[sum(M[i][t] * A[t][j] for t in range(k)) for j in range(k)] for i in range(k)]
    return sum(M[i][i] for i in range(k))


def test_certificates():
    assert GOLDEN.certificate == 2
    assert Sft.full(3).certificate == 1


@pytest.mark.parametrize("A", [((0, 1), (1, 0)), ((1, 1), (0, 1)), ((1, 0), (0, 1))])
def test_not_mixing(A):
    with pytest.raises(NotMixing):
        Sft(A)


def test_bad_matrices():
    with pytest.raises(ValueError):
        Sft(((1, 2), (1, 0)))
    with pytest.raises(ValueError):
        Sft(((1, 1, 0), (1, 0, 1)))


def test_golden_mean_counts():
    assert [GOLDEN.count_fixed(n) for n in range(1, 8)] == [1, 3, 4, 7, 11, 18, 29]


def test_trace_identity_to_twenty():
    A = ((1, 1, 0), (0, 1, 1), (1, 1, 1))
    sft = Sft(A)
    assert [sft.count_fixed(n) for n in range(1, 21)] == [_trace(A, n) for n in range(1, 21)]


@pytest.mark.parametrize("n", range(1, 11))
def test_periodic_words_by_brute_force(n):
    brute = [w for w in product(range(2), repeat=n)
             if all(GOLDEN.matrix[w[i]][w[(i + 1) % n]] for i in range(n))]
    words = GOLDEN.periodic_words(n)
    assert sorted(map(tuple, words.tolist())) == sorted(brute)


@settings(deadline=None, max_examples=30)
@given(mixing_matrices, st.integers(1, 8))
def test_periodic_words_count_trace(A, n):
    sft = Sft(A)
    assert sft.periodic_words(n).shape[0] == sft.count_fixed(n) == _trace(A, n)


def test_words_are_admissible_and_sorted():
    w = GOLDEN.words(5)
    assert w.shape[0] == 13
    assert all(GOLDEN.matrix[a][b] for row in w for a, b in zip(row[:-1], row[1:]))
    assert [tuple(r) for r in w.tolist()] == sorted(tuple(r) for r in w.tolist())


def test_theta_distance():
    assert theta_distance([0, 1, 0, 1], [0, 1, 1, 1], 0.5) == 0.25
    assert theta_distance([0, 1], [0, 1, 0], 0.5) == 0.0
    assert theta_distance([1], [0], 0.3) == 1.0


def test_transfer_operator_row_sums():
    psi = CylinderPotential.zero(GOLDEN)
    assert transfer_operator_apply(GOLDEN, psi, [1, 1]).tolist() == [2.0, 1.0]


@settings(deadline=None, max_examples=40)
@given(golden_tables, st.lists(st.floats(0, 10), min_size=3, max_size=3))
def test_transfer_operator_positive(table, v):
    psi = CylinderPotential(GOLDEN, 2, table)
    assert (transfer_operator_apply(GOLDEN, psi, v) >= 0).all()


@settings(deadline=None, max_examples=40)
@given(golden_tables, st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-3, 3))
def test_transfer_operator_linear(table, u, v, c):
    psi = CylinderPotential(GOLDEN, 2, table)
    lhs = transfer_operator_apply(GOLDEN, psi, np.add(u, np.multiply(c, v)))
    rhs = transfer_operator_apply(GOLDEN, psi, u) + c * transfer_operator_apply(GOLDEN, psi, v)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        transfer_operator_apply(GOLDEN, CylinderPotential.zero(GOLDEN), [1, 1, 1])
    with pytest.raises(DimensionMismatch):
        CylinderPotential(GOLDEN, 2, (0.0, 0.0))


def test_leading_eigenvalue_golden():
    psi = CylinderPotential.zero(GOLDEN)
    lam, vec, _ = power_iteration(np.asarray(GOLDEN.matrix, dtype=float))
    assert lam == pytest.approx(PHI, abs=1e-10)
    assert equilibrium_state(GOLDEN, psi).pressure == pytest.approx(math.log(PHI), abs=1e-10)


def test_power_iteration_stall():
    with pytest.raises(PowerIterationStall) as info:
        power_iteration(np.array([[0.0, 2.0], [1.0, 0.0]]), max_steps=500)
    assert info.value.ratio == pytest.approx(1.0)


def test_parry_measure_against_eigenvectors():
    A = np.array(GOLDEN.matrix, dtype=float)
    w, vr = np.linalg.eig(A)
    wl, vl = np.linalg.eig(A.T)
    r = np.abs(vr[:, np.argmax(w.real)])
    l = np.abs(vl[:, np.argmax(wl.real)])
    oracle = l * r / np.dot(l, r)
    state = equilibrium_state(GOLDEN, CylinderPotential.zero(GOLDEN))
    assert [state.cylinder_measure([i]) for i in range(2)] == pytest.approx(oracle, abs=1e-12)
    assert state.gibbs_constant >= 1.0


def test_full_shift_uniform():
    state = equilibrium_state(Sft.full(2), CylinderPotential.zero(Sft.full(2)))
    assert state.pressure == pytest.approx(math.log(2), abs=1e-14)
    for w in product(range(2), repeat=4):
        assert state.cylinder_measure(w) == pytest.approx(1 / 16, abs=1e-14)


@pytest.mark.parametrize("c", [-1.0, 0.3, 2.0])
def test_full_shift_bernoulli(c):
    full = Sft.full(2)
    state = equilibrium_state(full, CylinderPotential.first_symbol(full, [c, 0.0]))
    p = math.exp(c) / (1 + math.exp(c))
    assert state.pressure == pytest.approx(math.log(1 + math.exp(c)), abs=1e-12)
    for w in product(range(2), repeat=3):
        expected = math.prod(p if s == 0 else 1 - p for s in w)
        assert state.cylinder_measure(w) == pytest.approx(expected, abs=1e-12)


@settings(deadline=None, max_examples=20)
@given(golden_tables, st.integers(1, 5))
def test_kolmogorov_consistency_and_shift_invariance(table, k):
    state = equilibrium_state(GOLDEN, CylinderPotential(GOLDEN, 2, table))
    assert sum(state.measures) == pytest.approx(1.0, abs=1e-12)
    for w in GOLDEN.words(k):
        mu = state.cylinder_measure(w)
        right = sum(state.cylinder_measure(list(w) + [b]) for b in range(2))
        left = sum(state.cylinder_measure([a] + list(w)) for a in range(2))
        assert abs(mu - right) < 1e-12 and abs(mu - left) < 1e-12


@settings(deadline=None, max_examples=20)
@given(golden_tables)
def test_pressure_matches_quadratic_oracle(table):
    words = GOLDEN.words(2)
    psi = CylinderPotential(GOLDEN, 2, table)
    lam1, lam2 = quadratic_eigenvalues(weighted_transfer_matrix(
        GOLDEN.matrix, {tuple(int(s) for s in w): v for w, v in zip(words, table)}))
    assert equilibrium_state(GOLDEN, psi).pressure == pytest.approx(math.log(lam1), abs=1e-9)
    ratio, _ = eigenvalue_ratio(GOLDEN, psi)
    assert ratio == pytest.approx(abs(lam2 / lam1), abs=1e-9)


def test_potential_lift_keeps_birkhoff_sums():
    psi = CylinderPotential.first_symbol(GOLDEN, [0.4, -0.7])
    deep = psi.lift(4)
    words = GOLDEN.periodic_words(9)
    assert np.allclose(psi.birkhoff_sums(words), deep.birkhoff_sums(words), atol=1e-12)
    with pytest.raises(ValueError):
        deep.lift(2)


def test_approximation_error_recorded():
    psi = CylinderPotential.from_function(GOLDEN, lambda w: float(np.dot(w, 0.5 ** np.arange(w.size))),
                                          depth=6, theta=0.5, seminorm=2.0)
    assert psi.approximation_error == pytest.approx(2.0 * 0.5 ** 6)


def test_full_shift_periodic_measure_uniform():
    full = Sft.full(2)
    mu = symbolic_weighted_periodic_measure(full, CylinderPotential.zero(full), 3)
    assert mu.words.shape[0] == 8
    assert np.allclose(mu.weights, 1 / 8, atol=1e-15)


@settings(deadline=None, max_examples=20)
@given(golden_tables, st.integers(1, 12))
def test_periodic_weights_normalized(table, n):
    mu = symbolic_weighted_periodic_measure(GOLDEN, CylinderPotential(GOLDEN, 2, table), n)
    assert mu.words.shape[0] == _trace(GOLDEN.matrix, n)
    assert math.fsum(mu.weights) == pytest.approx(1.0, abs=1e-14)


def test_golden_three_atoms():
    assert symbolic_weighted_periodic_measure(GOLDEN, CylinderPotential.zero(GOLDEN), 3).words.shape[0] == 4


def test_full_shift_symmetric_errors_vanish():
    full = Sft.full(2)
    psi = CylinderPotential.zero(full)
    state = equilibrium_state(full, psi)
    words = full.words(1)
    for n in range(1, 13):
        mu = symbolic_weighted_periodic_measure(full, psi, n)
        assert mu.integrate_cylinder(words, [1, 0]) - state.integrate(words, [1, 0]) == 0.0


@pytest.mark.parametrize("table", [{}, {(0, 0): 0.2, (0, 1): 0.2}], ids=["zero", "weighted"])
def test_rate_near_eigenvalue_ratio(table):
    words = GOLDEN.words(2)
    psi = CylinderPotential(GOLDEN, 2, tuple(table.get(tuple(int(s) for s in w), 0.0) for w in words))
    exp = symbolic_ee_experiment(GOLDEN, psi, GOLDEN.words(1), [1.0, 0.0], range(4, 20, 2))
    lam1, lam2 = quadratic_eigenvalues(weighted_transfer_matrix(GOLDEN.matrix, table))
    oracle = abs(lam2 / lam1)
    assert 0.7 * oracle <= exp.fit.tau <= 1.3 * oracle
    assert exp.oracle_tau == pytest.approx(oracle, abs=1e-12)
    assert exp.pressure == pytest.approx(math.log(lam1), abs=1e-10)
