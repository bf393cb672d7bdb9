"""Periodic points of shear-perturbed automorphisms and the weighted periodic
measures built from their unstable Jacobians."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .maps import DEFAULT_DEPTH, AnosovMap
from .torus import LatticeMatrix, TorusPoint, lattice_kernel_points, wrap

MAX_NEWTON = 100
RESIDUAL_TARGET = 1e-11
DEDUP_QUANTUM = 1e-8


class NewtonDivergence(RuntimeError):
    pass


class CollisionDetected(RuntimeError):
    pass


class PairingFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class PeriodicPoint:
    point: TorusPoint
    period: int
    residual: float
    Du: float
    Ds: float
    iterations: int = 0


def lattice_fixed_points(linear: LatticeMatrix, n: int) -> np.ndarray:
    """fix(A^n) as an array sorted lexicographically."""
    return lattice_kernel_points(linear.power(n).minus_identity())


def _seed_orbits(linear: LatticeMatrix, seeds: np.ndarray, n: int):
    """Orbits of lattice seeds under A together with the integer translations
    m_k = A s_k - s_{k+1} that the linear model uses on the cover."""
    M = linear.power(n).minus_identity()
    D = abs(M.det)
    num = np.rint(seeds * D).astype(np.int64)
    A = np.array([[linear.a, linear.b], [linear.c, linear.d]], dtype=np.int64)
    orbit = np.empty((seeds.shape[0], n, 2))
    trans = np.empty((seeds.shape[0], n, 2))
    cur = num % D
    for k in range(n):
        orbit[:, k] = cur / D
        img = cur @ A.T
        nxt = img % D
        trans[:, k] = (img - nxt) // D
        cur = nxt
    return orbit, trans


def _shooting(fmap: AnosovMap, orbit: np.ndarray, trans: np.ndarray, max_iter: int):
    """Multiple-shooting Newton for f(X_k) - X_{k+1} - m_k = 0 (k cyclic).

    The unknown orbit lives on the cover next to the seed orbit and the
    integer translations are held fixed, so each solution is the
    continuation of its seed.  Returns (X, iterations, converged mask)."""
    B, n, _ = orbit.shape
    X = orbit.copy()
    iters = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    eye = np.eye(2)
    for it in range(max_iter + 1):
        flat = np.ascontiguousarray(X.reshape(-1, 2))
        img = K.map_points(fmap.ops, flat, False).reshape(B, n, 2)
        F = img - np.roll(X, -1, axis=1) - trans
        err = np.abs(F).reshape(B, -1).max(axis=1)
        newly = (~done) & (err <= 4e-16)
        done |= newly
        if done.all() or it == max_iter:
            break
        idx = np.nonzero(~done)[0]
        jac = K.jac_points(fmap.ops, np.ascontiguousarray(X[idx].reshape(-1, 2))).reshape(idx.size, n, 2, 2)
        J = np.zeros((idx.size, 2 * n, 2 * n))
        for k in range(n):
            J[:, 2 * k:2 * k + 2, 2 * k:2 * k + 2] = jac[:, k]
            j = (k + 1) % n
            J[:, 2 * k:2 * k + 2, 2 * j:2 * j + 2] -= eye
        delta = np.linalg.solve(J, -F[idx].reshape(idx.size, 2 * n, 1))[..., 0]
        step = delta.reshape(idx.size, n, 2)
        X[idx] += step
        iters[idx] += 1
        small = np.abs(step).reshape(idx.size, -1).max(axis=1) < 1e-15
        done[idx[small]] = True
    return X, iters, done


def iterate_extended(ops: np.ndarray, pts: np.ndarray, n: int) -> np.ndarray:
    """n-fold image in extended (long double) precision, reduced mod Z^2
    after every step.

    Forward iteration amplifies rounding by the unstable rate, so double
    precision cannot certify d(f^n p, p) < 1e-11 for n near 10; the extra
    bits make the evaluation error negligible against the residual itself."""
    two_pi = 2 * np.pi * np.longdouble(1)
    x = np.asarray(pts[:, 0], dtype=np.longdouble)
    y = np.asarray(pts[:, 1], dtype=np.longdouble)
    rows = [(int(r[0]), [np.longdouble(v) for v in r[1:]]) for r in ops]
    for _ in range(n):
        for kind, (p1, p2, p3, p4) in rows:
            if kind == 0:
                x, y = p1 * x + p2 * y, p3 * x + p4 * y
            elif kind == 1:
                w = two_pi * p2
                x = x + p1 * np.sin(w * y) / w
            else:
                w = two_pi * p2
                y = y + p1 * np.sin(w * x) / w
        x = x - np.floor(x)
        y = y - np.floor(y)
    return np.stack([x, y], axis=1)


def _residuals(fmap: AnosovMap, pts: np.ndarray, n: int) -> np.ndarray:
    img = iterate_extended(fmap.ops, pts, n)
    d = img - np.asarray(pts, dtype=np.longdouble)
    d = d - np.floor(d + np.longdouble(0.5))
    return np.hypot(d[:, 0], d[:, 1]).astype(float)


def residual_tolerance(fmap: AnosovMap, n: int) -> float:
    """1e-11, relaxed once the rounding of the coordinates alone, amplified by
    the unstable rate over n steps, approaches it."""
    return max(RESIDUAL_TARGET, 1e-15 * abs(fmap.lambda_u) ** n)


def _polish(fmap: AnosovMap, x0: np.ndarray, n: int, sweeps: int = 2) -> np.ndarray:
    """Newton sweeps on f^n(x) - x (mod Z^2) with the residual evaluated in
    extended precision, so the result is a double next to the periodic point
    rather than the shooting solution, which is good to a few ulps."""
    x = np.asarray(wrap(x0), dtype=np.longdouble)
    for _ in range(sweeps):
        xd = np.ascontiguousarray(x.astype(float))
        J = np.broadcast_to(np.eye(2), (xd.shape[0], 2, 2)).copy()
        cur = xd
        for _ in range(n):
            J = K.jac_points(fmap.ops, cur) @ J
            cur = K.map_points(fmap.ops, cur, True)
        d = iterate_extended(fmap.ops, x, n) - x
        F = (d - np.floor(d + np.longdouble(0.5))).astype(float)
        step = np.linalg.solve(J - np.eye(2), -F[..., None])[..., 0]
        x = x + step.astype(np.longdouble)
    return x.astype(float)


def _refine_chunk(fmap, orbit, trans, n):
    X, iters, converged = _shooting(fmap, orbit, trans, MAX_NEWTON)
    return _polish(fmap, X[:, 0], n), iters, converged


def enumerate_fixed_points(fmap: AnosovMap, n: int, threads: int = 1,
                           depth: int = DEFAULT_DEPTH) -> list[PeriodicPoint]:
    """fix(f^n), one refined point per lattice seed of fix(A^n), sorted."""
    pts, iters, resid = _refine_all(fmap, n, threads)
    log_du = fmap.log_unstable_jacobian(pts, n, depth)
    log_ds = fmap.log_stable_jacobian(pts, n, depth)
    return [PeriodicPoint(TorusPoint(float(p[0]), float(p[1])), n, float(r), float(math.exp(lu)),
                          float(math.exp(ls)), int(it))
            for p, it, r, lu, ls in zip(pts, iters, resid, log_du, log_ds)]


def _refine_all(fmap: AnosovMap, n: int, threads: int = 1):
    if n < 1:
        raise ValueError("period must be >= 1")
    seeds = lattice_fixed_points(fmap.linear_part, n)
    orbit, trans = _seed_orbits(fmap.linear_part, seeds, n)
    chunks = np.array_split(np.arange(seeds.shape[0]), max(1, min(threads, seeds.shape[0])) * 4)
    chunks = [c for c in chunks if c.size]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _refine_chunk(fmap, orbit[c], trans[c], n), chunks))
    else:
        parts = [_refine_chunk(fmap, orbit[c], trans[c], n) for c in chunks]
    X0 = np.concatenate([p[0] for p in parts])
    iters = np.concatenate([p[1] for p in parts])
    converged = np.concatenate([p[2] for p in parts])
    pts = wrap(X0)
    resid = _residuals(fmap, pts, n)
    bad = (~converged) | (resid >= residual_tolerance(fmap, n))
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise NewtonDivergence(f"seed {seeds[i].tolist()} of period {n} did not converge "
                               f"(residual {resid[i]:.3e})")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts, iters, resid = pts[order], iters[order], resid[order]
    keys = np.rint(pts / DEDUP_QUANTUM).astype(np.int64) % int(round(1 / DEDUP_QUANTUM))
    if np.unique(keys, axis=0).shape[0] != keys.shape[0]:
        raise CollisionDetected(f"two seeds of period {n} refined to the same point")
    return pts, iters, resid


def refine_newton(fmap: AnosovMap, seed, n: int) -> PeriodicPoint:
    """Refine a guess for a point of period n by multiple shooting.

    The guess orbit is the f-orbit of the seed; its cover translations are
    frozen, including the closing translation from f^n(seed) back to seed."""
    s = np.asarray(tuple(seed), dtype=float)
    orbit = np.empty((1, n, 2))
    trans = np.empty((1, n, 2))
    cur = wrap(s)
    for k in range(n):
        orbit[0, k] = cur
        img = fmap.apply_lift(cur)
        nxt = wrap(img) if k < n - 1 else wrap(s)
        trans[0, k] = np.rint(img - nxt)
        cur = wrap(img)
    X, iters, ok = _shooting(fmap, orbit, trans, MAX_NEWTON)
    p = wrap(_polish(fmap, X[:, 0], n)[0])
    r = float(_residuals(fmap, p[None, :], n)[0])
    if not ok[0] or r >= residual_tolerance(fmap, n):
        raise NewtonDivergence(f"refinement failed (residual {r:.3e})")
    return PeriodicPoint(TorusPoint(float(p[0]), float(p[1])), n, r,
                         float(fmap.unstable_jacobian(p, n)), float(fmap.stable_jacobian(p, n)),
                         int(iters[0]))


@dataclass(frozen=True)
class WeightedOrbitMeasure:
    """mu^n = (1/Z_n) sum_{p in fix f^n} D_u f^n(p)^{-1} delta_p."""

    period: int
    points: np.ndarray
    log_du: np.ndarray
    log_ds: np.ndarray
    weights: np.ndarray
    log_Z: float

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def atoms(self) -> list[tuple[PeriodicPoint, float]]:
        return [(PeriodicPoint(TorusPoint(float(p[0]), float(p[1])), self.period, 0.0,
                               math.exp(lu), math.exp(ls)), float(w))
                for p, lu, ls, w in zip(self.points, self.log_du, self.log_ds, self.weights)]

    def integrate(self, observable) -> float:
        # self-normalized exact sums: constants integrate to exactly themselves
        values = np.broadcast_to(np.asarray(observable(self.points), dtype=float), self.weights.shape)
        return math.fsum(self.weights * values) / math.fsum(self.weights)


def weights_from_log_jacobians(log_du: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalized weights proportional to exp(-log_du) and log Z, computed
    with max-log subtraction."""
    neg = -np.asarray(log_du, dtype=float)
    top = float(neg.max())
    scaled = np.exp(neg - top)
    total = float(scaled.sum())
    return scaled / total, top + math.log(total)


def build_weighted_measure(fmap: AnosovMap, n: int, threads: int = 1,
                           depth: int = DEFAULT_DEPTH) -> WeightedOrbitMeasure:
    pts, _, _ = _refine_all(fmap, n, threads)
    log_du = fmap.log_unstable_jacobian(pts, n, depth)
    log_ds = fmap.log_stable_jacobian(pts, n, depth)
    weights, log_Z = weights_from_log_jacobians(log_du)
    return WeightedOrbitMeasure(n, pts, log_du, log_ds, weights, log_Z)


@dataclass(frozen=True)
class MatchingReport:
    period: int
    count: int
    max_unstable_deviation: float
    max_stable_deviation: float
    max_unstable_relative: float
    max_pairing_distance: float

    def within(self, tol: float) -> bool:
        return self.max_unstable_deviation < tol and self.max_stable_deviation < tol

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_periodic_data_matching(f: AnosovMap, g: AnosovMap, h, n: int,
                                 radius: float = 1e-6, threads: int = 1) -> MatchingReport:
    """Pair p in fix(f^n) with the refined g-point nearest to h(p) and compare
    unstable and stable Jacobians of period n."""
    mf = build_weighted_measure(f, n, threads)
    mg = mf if g == f else build_weighted_measure(g, n, threads)
    image = mf.points if g == f else h(mf.points)
    tree = cKDTree(mg.points, boxsize=1.0)
    dist, idx = tree.query(wrap(image) % 1.0)
    if np.any(dist > radius):
        worst = int(np.argmax(dist))
        raise PairingFailure(f"h(p) for p={mf.points[worst].tolist()} is {dist[worst]:.2e} from "
                             f"the nearest refined g-point")
    if np.unique(idx).size != idx.size:
        raise PairingFailure("transported points are not in bijection with fix(g^n)")
    du_f, du_g = np.exp(mf.log_du), np.exp(mg.log_du[idx])
    ds_f, ds_g = np.exp(mf.log_ds), np.exp(mg.log_ds[idx])
    return MatchingReport(
        n, mf.count,
        float(np.max(np.abs(du_f - du_g))),
        float(np.max(np.abs(ds_f - ds_g))),
        float(np.max(np.abs(du_f - du_g) / du_f)),
        float(dist.max()),
    )
