"""Subshifts of finite type with locally constant potentials: transfer
operators on cylinder functions, equilibrium states and weighted periodic
measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .srb import RateFit, fit_rate


class NotMixing(ValueError):
    """The transition matrix is not irreducible and aperiodic."""


class DimensionMismatch(ValueError):
    pass


class PowerIterationStall(RuntimeError):
    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


def _int_power(A: np.ndarray, n: int) -> np.ndarray:
    """Exact integer matrix power (object dtype, no overflow)."""
    result = np.identity(A.shape[0], dtype=object)
    base = A.astype(object)
    while n:
        if n & 1:
            result = result.dot(base)
        base = base.dot(base)
        n >>= 1
    return result


@dataclass(frozen=True)
class Sft:
    """One-sided subshift on symbols 0..m-1 with 0/1 transition matrix."""

    matrix: tuple
    certificate: int = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=int)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ValueError("transition matrix must be square")
        if not np.isin(A, (0, 1)).all():
            raise ValueError("transition matrix must be 0/1")
        object.__setattr__(self, "matrix", tuple(tuple(int(v) for v in row) for row in A))
        m = A.shape[0]
        power = np.identity(m, dtype=int)
        for k in range(1, m * m + 1):
            power = np.minimum(power @ A, 1)
            if power.min() > 0:
                object.__setattr__(self, "certificate", k)
                return
        raise NotMixing("no power of the transition matrix up to m^2 is positive")

    @classmethod
    def full(cls, m: int) -> "Sft":
        return cls(tuple(tuple(1 for _ in range(m)) for _ in range(m)))

    @classmethod
    def golden_mean(cls) -> "Sft":
        return cls(((1, 1), (1, 0)))

    @property
    def A(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=int)

    @property
    def symbols(self) -> int:
        return len(self.matrix)

    def count_fixed(self, n: int) -> int:
        """#fix(sigma^n) = trace(A^n), exactly."""
        return int(np.trace(_int_power(self.A, n)))

    def words(self, length: int) -> np.ndarray:
        """Admissible words of the given length, lexicographically sorted,
        as an (N, length) array."""
        if length < 1:
            raise ValueError("length must be >= 1")
        A = self.A
        words = np.arange(self.symbols)[:, None]
        for _ in range(length - 1):
            last = words[:, -1]
            nxt = [np.column_stack([words[A[last, b] == 1], np.full((A[last, b] == 1).sum(), b)])
                   for b in range(self.symbols)]
            words = np.vstack(nxt)
            words = words[np.lexsort(words.T[::-1])]
        return words

    def periodic_words(self, n: int) -> np.ndarray:
        """Words w of length n with w_{n-1} -> w_0 admissible: the points of
        fix(sigma^n), one row each (rotations are distinct points)."""
        w = self.words(n)
        return w[self.A[w[:, -1], w[:, 0]] == 1]


def theta_distance(x, y, theta: float) -> float:
    """theta^N with N the first index where the sequences differ (0 if equal
    on the common length)."""
    x, y = np.asarray(x), np.asarray(y)
    k = min(x.size, y.size)
    diff = np.nonzero(x[:k] != y[:k])[0]
    return 0.0 if diff.size == 0 else theta ** int(diff[0])


@dataclass(frozen=True)
class CylinderPotential:
    """A potential depending on the first ``depth`` symbols, stored as a
    table over admissible depth-words (rows of ``sft.words(depth)``)."""

    sft: Sft
    depth: int
    table: tuple
    theta: float = 0.5
    approximation_error: float = 0.0

    def __post_init__(self):
        n_words = self.sft.words(self.depth).shape[0]
        values = tuple(float(v) for v in self.table)
        if len(values) != n_words:
            raise DimensionMismatch(f"table has {len(values)} entries, expected {n_words}")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("potential table must be finite")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        object.__setattr__(self, "table", values)

    @classmethod
    def zero(cls, sft: Sft, depth: int = 1) -> "CylinderPotential":
        return cls(sft, depth, tuple(0.0 for _ in range(sft.words(depth).shape[0])))

    @classmethod
    def from_function(cls, sft: Sft, func: Callable[[np.ndarray], float], depth: int,
                      theta: float = 0.5, seminorm: float = 0.0) -> "CylinderPotential":
        """Evaluate ``func`` on each depth-word; for a source potential with
        theta-seminorm ``seminorm`` the sup error of the table is at most
        seminorm * theta^depth, which is recorded."""
        words = sft.words(depth)
        return cls(sft, depth, tuple(float(func(w)) for w in words), theta, seminorm * theta ** depth)

    @classmethod
    def first_symbol(cls, sft: Sft, values) -> "CylinderPotential":
        return cls(sft, 1, tuple(float(v) for v in values))

    def lift(self, depth: int) -> "CylinderPotential":
        """The same potential tabulated on longer words."""
        if depth < self.depth:
            raise ValueError("cannot lower the depth of a potential")
        src = self.sft.words(self.depth)
        index = {tuple(w): i for i, w in enumerate(src)}
        words = self.sft.words(depth)
        vals = tuple(self.table[index[tuple(w[:self.depth])]] for w in words)
        return CylinderPotential(self.sft, depth, vals, self.theta, self.approximation_error)

    def values_on(self, words: np.ndarray) -> np.ndarray:
        src = self.sft.words(self.depth)
        index = {tuple(w): i for i, w in enumerate(src)}
        table = np.asarray(self.table)
        return table[[index[tuple(w[:self.depth])] for w in words]]

    def birkhoff_sums(self, periodic: np.ndarray) -> np.ndarray:
        """S_n psi for periodic points given by their period words."""
        n = periodic.shape[1]
        reps = math.ceil((n + self.depth - 1) / n) + 1
        ext = np.tile(periodic, (1, reps))
        total = np.zeros(periodic.shape[0])
        for k in range(n):
            total += self.values_on(ext[:, k:k + self.depth])
        return total


def _block_matrix(sft: Sft, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Words of the given depth and the 0/1 matrix T[C', C] = 1 when the
    word C follows C' one step along a sequence."""
    words = sft.words(depth)
    A = sft.A
    n = words.shape[0]
    if depth == 1:
        T = A[words[:, 0][:, None], words[:, 0][None, :]]
        return words, T.astype(float)
    index = {tuple(w): i for i, w in enumerate(words)}
    T = np.zeros((n, n))
    for i, w in enumerate(words):
        for b in range(sft.symbols):
            if A[w[-1], b]:
                j = index.get(tuple(w[1:]) + (b,))
                if j is not None:
                    T[i, j] = 1.0
    return words, T


def weighted_matrix(sft: Sft, psi: CylinderPotential) -> np.ndarray:
    """W[C', C] = exp(psi(C')) T[C', C]; the transfer operator on functions
    of depth-d cylinders is the transpose."""
    _, T = _block_matrix(sft, psi.depth)
    return np.exp(np.asarray(psi.table))[:, None] * T


def transfer_operator_apply(sft: Sft, psi: CylinderPotential, v) -> np.ndarray:
    """(L v)(C) = sum over one-symbol preimage cylinders C' of exp(psi(C')) v(C')."""
    v = np.asarray(v, dtype=float)
    W = weighted_matrix(sft, psi)
    if v.shape != (W.shape[0],):
        raise DimensionMismatch(f"function has shape {v.shape}, expected ({W.shape[0]},)")
    return W.T @ v


def power_iteration(M: np.ndarray, tol: float = 1e-14, max_steps: int = 100_000):
    """Leading eigenvalue and positive eigenvector of a nonnegative matrix."""
    v = np.ones(M.shape[0]) / M.shape[0]
    lam = 0.0
    for step in range(max_steps):
        w = M @ v
        new = float(w.sum())
        w /= new
        if np.abs(w - v).max() < tol and abs(new - lam) < tol * abs(new):
            return new, w, step
        v, lam = w, new
    ev = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
    ratio = float(ev[1] / ev[0]) if ev.size > 1 else 0.0
    raise PowerIterationStall(f"power iteration stalled (subleading ratio {ratio:.6f})", ratio)


@dataclass(frozen=True)
class EquilibriumState:
    sft: Sft
    potential: CylinderPotential
    pressure: float
    words: np.ndarray
    left: np.ndarray
    right: np.ndarray
    measures: np.ndarray
    transitions: np.ndarray
    gibbs_constant: float

    @property
    def depth(self) -> int:
        return self.potential.depth

    def _index(self):
        return {tuple(w): i for i, w in enumerate(self.words)}

    def cylinder_measure(self, word) -> float:
        """mu of the cylinder [w_0 ... w_{k-1}] for any k >= 1."""
        w = tuple(int(s) for s in word)
        d = self.depth
        A = self.sft.A
        if any(A[a, b] == 0 for a, b in zip(w[:-1], w[1:])):
            return 0.0
        index = self._index()
        if len(w) < d:
            return float(sum(self.measures[i] for key, i in index.items() if key[:len(w)] == w))
        i = index[w[:d]]
        total = self.measures[i]
        for k in range(1, len(w) - d + 1):
            j = index[w[k:k + d]]
            total *= self.transitions[i, j]
            i = j
        return float(total)

    def integrate(self, table_words: np.ndarray, values: np.ndarray) -> float:
        """Integral of a cylinder function given on words of length k."""
        return float(sum(v * self.cylinder_measure(w) for w, v in zip(table_words, values)))


def equilibrium_state(sft: Sft, psi: CylinderPotential, depth: int | None = None,
                      gibbs_samples: int = 64, gibbs_length: int = 12, seed: int = 0) -> EquilibriumState:
    """Equilibrium state of a locally constant potential as the Markov
    measure built from the left and right Perron vectors of the weighted
    block matrix."""
    if depth is not None and depth != psi.depth:
        psi = psi.lift(depth)
    words, T = _block_matrix(sft, psi.depth)
    W = np.exp(np.asarray(psi.table))[:, None] * T
    lam, right, _ = power_iteration(W)
    lam_l, left, _ = power_iteration(W.T)
    if abs(lam - lam_l) > 1e-10 * lam:
        raise PowerIterationStall("left and right leading eigenvalues disagree", float("nan"))
    measures = left * right
    measures /= measures.sum()
    P = W * right[None, :] / (lam * right[:, None])
    pressure = math.log(lam)
    state = EquilibriumState(sft, psi, pressure, words, left, right, measures, P, 0.0)
    K = _gibbs_constant(state, gibbs_samples, gibbs_length, seed)
    return EquilibriumState(sft, psi, pressure, words, left, right, measures, P, K)


def _gibbs_constant(state: EquilibriumState, samples: int, length: int, seed: int) -> float:
    """max over sampled words of |log (mu[C_n] / exp(S_n psi - n P))|, as K = e^max."""
    rng = np.random.default_rng(seed)
    A = state.sft.A
    psi = state.potential
    d = psi.depth
    worst = 0.0
    for _ in range(samples):
        w = [int(rng.integers(state.sft.symbols))]
        while len(w) < length + d - 1:
            options = np.nonzero(A[w[-1]])[0]
            w.append(int(rng.choice(options)))
        w = np.array(w)
        sums = sum(psi.values_on(w[k:k + d][None, :])[0] for k in range(length))
        mu = state.cylinder_measure(w[:length + d - 1])
        worst = max(worst, abs(math.log(mu) - (sums - length * state.pressure)))
    return math.exp(worst)


@dataclass(frozen=True)
class PeriodicWordMeasure:
    period: int
    words: np.ndarray
    weights: np.ndarray

    def integrate_cylinder(self, table_words: np.ndarray, values: np.ndarray) -> float:
        k = table_words.shape[1]
        ext = np.tile(self.words, (1, math.ceil(k / self.period) + 1))[:, :k]
        index = {tuple(w): i for i, w in enumerate(table_words)}
        vals = np.asarray(values, dtype=float)
        return float(np.dot(self.weights, vals[[index[tuple(w)] for w in ext]]))


def symbolic_weighted_periodic_measure(sft: Sft, psi: CylinderPotential, n: int) -> PeriodicWordMeasure:
    """Atoms at every point of fix(sigma^n) with weights exp(S_n psi) / Z_n."""
    if sft.count_fixed(n) > 1_000_000:
        raise ValueError("too many periodic points")
    words = sft.periodic_words(n)
    sums = psi.birkhoff_sums(words)
    top = sums.max()
    w = np.exp(sums - top)
    return PeriodicWordMeasure(n, words, w / w.sum())


@dataclass(frozen=True)
class SymbolicExperiment:
    rows: tuple
    fit: RateFit
    oracle_tau: float
    pressure: float
    oracle_pressure: float


def eigenvalue_ratio(sft: Sft, psi: CylinderPotential) -> tuple[float, float]:
    """(|lambda_2 / lambda_1|, log lambda_1) of the weighted block matrix by
    dense eigen-decomposition."""
    ev = np.linalg.eigvals(weighted_matrix(sft, psi))
    mods = np.sort(np.abs(ev))[::-1]
    return float(mods[1] / mods[0]) if mods.size > 1 else 0.0, float(math.log(mods[0]))


def symbolic_ee_experiment(sft: Sft, psi: CylinderPotential, phi_words: np.ndarray, phi_values,
                           periods) -> SymbolicExperiment:
    """Errors |int phi dmu^n - int phi dmu| against the equilibrium state."""
    state = equilibrium_state(sft, psi)
    exact = state.integrate(phi_words, phi_values)
    rows = []
    for n in periods:
        mu_n = symbolic_weighted_periodic_measure(sft, psi, n)
        rows.append((int(n), abs(mu_n.integrate_cylinder(phi_words, phi_values) - exact), mu_n.words.shape[0]))
    fit = fit_rate([r[0] for r in rows], [r[1] for r in rows])
    ratio, log_lead = eigenvalue_ratio(sft, psi)
    return SymbolicExperiment(tuple(rows), fit, ratio, state.pressure, log_lead)
