"""Conjugacies homotopic to the identity: H_f with H_f o f = A o H_f, and the
composition h = H_g^{-1} o H_f which satisfies h o f = g o h."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .maps import AnosovMap, _as_points
from .torus import centered, torus_distances, wrap

MAX_TERMS = 10_000


class NonConvergence(RuntimeError):
    """The displacement series needs more than MAX_TERMS terms."""


class NewtonDivergence(RuntimeError):
    """Inversion of a conjugacy did not converge."""


class DegenerateSample(ValueError):
    """Leafwise distances span too small a range for a slope fit."""


def _perturbation_bound(fmap: AnosovMap) -> float:
    """Upper bound for |f - A| on the cover."""
    post = sum(abs(s.amplitude) / (2 * math.pi * s.frequency) for s in fmap.shears)
    pre = sum(abs(s.amplitude) / (2 * math.pi * s.frequency) for s in fmap.pre_shears)
    return post + float(np.linalg.norm(fmap.linear_part.array(), 2)) * pre


@dataclass(frozen=True)
class LinearizingConjugacy:
    """Series evaluator of H = id + u with H o f = A o H."""

    map: AnosovMap
    tol: float = 1e-13
    terms: tuple = field(init=False)

    def __post_init__(self):
        lam_u, lam_s = self.map.lambda_u, self.map.lambda_s
        basis = np.column_stack([self.map.linear_unstable, self.map.linear_stable])
        binv = np.linalg.inv(basis)
        bound = _perturbation_bound(self.map) * float(np.abs(binv).sum(axis=1).max())
        object.__setattr__(self, "_basis", basis)
        object.__setattr__(self, "_binv", binv)
        if bound == 0.0:
            object.__setattr__(self, "terms", (0, 0))
            return
        # tails: bound * r^{K+1} / (1 - r) with r = 1/|lam_u| (unstable) or |lam_s| (stable)
        counts = []
        for r in (1.0 / abs(lam_u), abs(lam_s)):
            if r >= 1.0:
                raise NonConvergence("linear part is not hyperbolic")
            n = math.ceil(math.log(self.tol * (1.0 - r) / bound) / math.log(r))
            n = max(n, 1)
            if n > MAX_TERMS:
                raise NonConvergence(f"series needs {n} terms (> {MAX_TERMS})")
            counts.append(n + 1)
        object.__setattr__(self, "terms", tuple(counts))

    def displacement(self, p) -> np.ndarray:
        """u(p) = H(p) - p, a Z^2-periodic function."""
        pts, single = _as_points(p)
        pts = np.ascontiguousarray(wrap(pts))
        if self.terms == (0, 0):
            out = np.zeros_like(pts)
        else:
            lin = self.map.linear_part.array().ravel()
            out = K.conjugacy_displacement(
                self.map.ops, self.map.inverse_ops, lin, self._binv.ravel(), self._basis.ravel(),
                self.map.lambda_u, self.map.lambda_s, self.terms[0], self.terms[1], pts)
        return out[0] if single else out

    def evaluate_lift(self, p) -> np.ndarray:
        """H on the fixed lift p in [0,1)^2: p + u(p)."""
        pts, single = _as_points(p)
        pts = wrap(pts)
        out = pts + self.displacement(pts)
        return out[0] if single else out

    def evaluate(self, p) -> np.ndarray:
        return wrap(self.evaluate_lift(p))

    def linear_coordinates(self, p) -> np.ndarray:
        """H(p) on the lift, expressed in the (unstable, stable) eigenbasis."""
        return self.evaluate_lift(p) @ self._binv.T

    def invert(self, target, seed=None, max_steps: int = 200, tol: float = 1e-13) -> np.ndarray:
        """Solve H(q) = target mod Z^2.

        Each step is a Newton step with the identity as the Jacobian of
        H = id + u (u is small and only Holder, so its derivative is not
        used).  A step that does not reduce the residual is halved, up to
        12 times, before being accepted."""
        tgt, single = _as_points(target)
        q = np.array(tgt if seed is None else _as_points(seed)[0], dtype=float)
        res = centered(self.evaluate_lift(q) - tgt)
        norm = np.hypot(res[:, 0], res[:, 1])
        active = norm >= tol
        for _ in range(max_steps):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            step = res[idx].copy()
            trial_norm = np.full(idx.size, np.inf)
            scale = np.ones(idx.size)
            todo = np.ones(idx.size, dtype=bool)
            trial_q = q[idx].copy()
            trial_res = res[idx].copy()
            for _ in range(13):
                if not todo.any():
                    break
                sub = np.nonzero(todo)[0]
                cand = q[idx[sub]] - scale[sub, None] * step[sub]
                r = centered(self.evaluate_lift(cand) - tgt[idx[sub]])
                nr = np.hypot(r[:, 0], r[:, 1])
                accept = nr < norm[idx[sub]]
                take = sub[accept]
                trial_q[take] = cand[accept]
                trial_res[take] = r[accept]
                trial_norm[take] = nr[accept]
                todo[take] = False
                scale[sub[~accept]] *= 0.5
            stuck = np.isinf(trial_norm)
            if stuck.any():
                # no descent available at this resolution: keep the point
                trial_norm[stuck] = norm[idx[stuck]]
            q[idx] = trial_q
            res[idx] = trial_res
            old = norm[idx]
            norm[idx] = trial_norm
            active[idx] = (trial_norm >= tol) & ~stuck
            if stuck.any() and np.any(old[stuck] > 1e3 * tol):
                raise NewtonDivergence(f"inversion stalled at residual {old[stuck].max():.3e}")
        else:
            if active.any():
                raise NewtonDivergence(f"inversion not converged after {max_steps} steps "
                                       f"(residual {norm[active].max():.3e})")
        out = wrap(q)
        return out[0] if single else out


@dataclass(frozen=True)
class ComposedConjugacy:
    """h = H_g^{-1} o H_f, the conjugacy homotopic to the identity with
    h o f = g o h pinned by the origin-anchored series."""

    forward: LinearizingConjugacy
    inverse_of: LinearizingConjugacy
    max_steps: int = 200
    tol: float = 1e-13

    @classmethod
    def between(cls, f: AnosovMap, g: AnosovMap, tol: float = 1e-13) -> "ComposedConjugacy":
        if f.linear_part != g.linear_part:
            raise ValueError("maps must share the linear part to be conjugate near the identity")
        return cls(LinearizingConjugacy(f, tol), LinearizingConjugacy(g, tol))

    @property
    def source(self) -> AnosovMap:
        return self.forward.map

    @property
    def target(self) -> AnosovMap:
        return self.inverse_of.map

    def evaluate(self, p) -> np.ndarray:
        pts, single = _as_points(p)
        if self.forward.map == self.inverse_of.map:
            out = wrap(pts)
        else:
            X = self.forward.evaluate_lift(pts)
            out = self.inverse_of.invert(X, seed=X, max_steps=self.max_steps, tol=self.tol)
        return out[0] if single else out

    __call__ = evaluate

    def reversed(self) -> "ComposedConjugacy":
        """h^{-1} = H_f^{-1} o H_g."""
        return ComposedConjugacy(self.inverse_of, self.forward, self.max_steps, self.tol)

    def residual(self, p) -> np.ndarray:
        """d(h(f(p)), g(h(p)))."""
        pts, _ = _as_points(p)
        return torus_distances(self.evaluate(self.source.apply(pts)),
                               self.target.apply(self.evaluate(pts)))


def estimate_holder_exponent(conj: ComposedConjugacy, pairs: int = 200, dmin: float = 1e-5,
                             dmax: float = 1e-1, seed: int = 0) -> tuple[float, float, float]:
    """Least-squares slope of log d(h(x), h(y)) against log d^u(x, y) for pairs
    on common unstable leaves of the source map.

    Returns (alpha0, seminorm, rms residual of the fit); the slope is capped
    at 1, since a larger exponent only reflects sampling noise."""
    from .leaves import trace_unstable

    if pairs < 100:
        raise DegenerateSample("need at least 100 pairs")
    if math.log10(dmax / dmin) < 2.0:
        raise DegenerateSample("leafwise distances must span at least two decades")
    rng = np.random.default_rng(seed)
    f = conj.source
    base = rng.random((pairs, 2))
    dists = np.exp(rng.uniform(math.log(dmin), math.log(dmax), pairs))
    xs, ys = [], []
    for p, d in zip(base, dists):
        seg = trace_unstable(f, p, float(d), +1)
        xs.append(seg.point(0.0))
        ys.append(seg.point(float(d)))
    hx = conj.evaluate(np.array(xs))
    hy = conj.evaluate(np.array(ys))
    image = torus_distances(hx, hy)
    logx, logy = np.log(dists), np.log(image)
    slope, intercept = np.polyfit(logx, logy, 1)
    resid = logy - (slope * logx + intercept)
    return min(float(slope), 1.0), float(math.exp(intercept)), float(np.sqrt(np.mean(resid ** 2)))
