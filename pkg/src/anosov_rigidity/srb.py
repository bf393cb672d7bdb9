"""SRB reference integrals, equidistribution of weighted periodic measures,
rate fits, su-rectangles and their Lipschitz mollifiers.

For the shear family every map preserves area, so the SRB measure is
Lebesgue measure on the torus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from matplotlib.path import Path
from scipy import sparse, stats
from scipy.spatial import cKDTree

from .leaves import LeafSegment, NoCrossing, conditional_density, leafwise_integral, stable_holonomy, trace_stable, trace_unstable
from .maps import AnosovMap
from .periodic import WeightedOrbitMeasure, build_weighted_measure
from .torus import centered, wrap

TWO_PI = 2 * math.pi


class InsufficientData(ValueError):
    pass


class RectangleOverlap(ValueError):
    pass


# -- observables ---------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """A Lipschitz function on the torus with a declared Lipschitz constant
    and sup norm.  ``func`` takes an (N, 2) array of wrapped points."""

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    lipschitz: float
    sup_norm: float

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        out = self.func(wrap(np.atleast_2d(pts)))
        return float(out[0]) if single else out

    @classmethod
    def constant(cls, value: float = 1.0) -> "Observable":
        return cls(f"const({value})", lambda p: np.full(p.shape[0], float(value)), 0.0, abs(value))

    @classmethod
    def trig(cls, terms, name: str | None = None) -> "Observable":
        """Sum of amp * cos(2 pi (kx x + ky y) + phase) over (kx, ky, amp, phase)."""
        terms = tuple((int(kx), int(ky), float(a), float(ph)) for kx, ky, a, ph in terms)

        def func(p):
            out = np.zeros(p.shape[0])
            for kx, ky, a, ph in terms:
                out += a * np.cos(TWO_PI * (kx * p[:, 0] + ky * p[:, 1]) + ph)
            return out

        lip = sum(abs(a) * TWO_PI * math.hypot(kx, ky) for kx, ky, a, _ in terms)
        sup = sum(abs(a) for _, _, a, _ in terms)
        label = name or "+".join(f"{a:g}cos(2pi({kx}x+{ky}y)+{ph:g})" for kx, ky, a, ph in terms)
        return cls(label, func, lip, sup)

    @classmethod
    def cos_product(cls) -> "Observable":
        return cls("cos(2pi x)cos(2pi y)",
                   lambda p: np.cos(TWO_PI * p[:, 0]) * np.cos(TWO_PI * p[:, 1]),
                   TWO_PI, 1.0)

    @classmethod
    def exp_cos(cls) -> "Observable":
        # |grad| = e^{c} 2 pi |(sin 2pi x, sin 2pi y)| <= e^2 2 pi sqrt(2)
        return cls("exp(cos(2pi x)+cos(2pi y))",
                   lambda p: np.exp(np.cos(TWO_PI * p[:, 0]) + np.cos(TWO_PI * p[:, 1])),
                   math.e ** 2 * TWO_PI * math.sqrt(2), math.e ** 2)

    @classmethod
    def distance_to(cls, point) -> "Observable":
        q = np.asarray(tuple(point), dtype=float)

        def func(p):
            d = centered(p - q)
            return np.hypot(d[:, 0], d[:, 1])

        return cls(f"dist({q[0]:g},{q[1]:g})", func, 1.0, math.sqrt(0.5))

    @classmethod
    def table(cls, values, name: str = "table") -> "Observable":
        """Periodic bilinear interpolation of a grid of values at cell corners
        (i/n, j/m); the Lipschitz constant is read off the grid differences."""
        grid = np.asarray(values, dtype=float)
        n, m = grid.shape

        def func(p):
            x, y = p[:, 0] * n, p[:, 1] * m
            i, j = np.floor(x).astype(int), np.floor(y).astype(int)
            a, b = x - i, y - j
            i0, j0, i1, j1 = i % n, j % m, (i + 1) % n, (j + 1) % m
            return ((1 - a) * (1 - b) * grid[i0, j0] + a * (1 - b) * grid[i1, j0]
                    + (1 - a) * b * grid[i0, j1] + a * b * grid[i1, j1])

        dx = np.abs(np.roll(grid, -1, axis=0) - grid).max() * n
        dy = np.abs(np.roll(grid, -1, axis=1) - grid).max() * m
        return cls(name, func, float(math.hypot(dx, dy)), float(np.abs(grid).max()))


def measured_lipschitz(obs: Observable, pairs: int = 100_000, scale: float = 1e-4, seed: int = 0) -> float:
    """Largest difference quotient over random close pairs."""
    rng = np.random.default_rng(seed)
    p = rng.random((pairs, 2))
    step = rng.normal(size=(pairs, 2)) * scale
    q = p + step
    return float(np.max(np.abs(obs(q) - obs(p)) / np.hypot(step[:, 0], step[:, 1])))


def default_observables() -> list[Observable]:
    """Five even observables; odd ones integrate to exactly zero against the
    periodic measures of odd shears and carry no rate information."""
    return [
        Observable.trig([(1, 0, 1.0, 0.0)], "cos(2pi x)"),
        Observable.trig([(0, 1, 1.0, 0.0)], "cos(2pi y)"),
        Observable.cos_product(),
        Observable.trig([(1, -1, 1.0, 0.0)], "cos(2pi(x-y))"),
        Observable.exp_cos(),
    ]


# -- reference integrals ---------------------------------------------------------

@dataclass(frozen=True)
class SrbIntegral:
    value: float
    error_estimate: float
    resolution: int


def _midpoint(obs: Observable, n: int, chunk: int = 1 << 20) -> float:
    g = (np.arange(n) + 0.5) / n
    total = 0.0
    rows = max(1, chunk // n)
    for start in range(0, n, rows):
        xs = g[start:start + rows]
        pts = np.stack(np.meshgrid(xs, g, indexing="ij"), -1).reshape(-1, 2)
        total += math.fsum(obs(pts))
    return total / (n * n)


def srb_integral(f: AnosovMap, obs: Observable, grid: int = 1024) -> SrbIntegral:
    """Midpoint rule on a grid x grid mesh; the error estimate is the
    Richardson difference against the half-resolution mesh assuming
    second-order convergence."""
    if grid < 1024:
        raise ValueError("resolution must be at least 1024")
    fine = _midpoint(obs, grid)
    coarse = _midpoint(obs, grid // 2)
    return SrbIntegral(fine, abs(fine - coarse) / 3.0, grid)


def equidistribution_error(f: AnosovMap, obs: Observable, n: int,
                           measure: WeightedOrbitMeasure | None = None,
                           reference: float | None = None) -> float:
    mu = measure if measure is not None else build_weighted_measure(f, n)
    ref = reference if reference is not None else srb_integral(f, obs).value
    return abs(ref - mu.integrate(obs))


# -- rate fits -----------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    periods: tuple
    errors: tuple
    log_tau: float
    log_C: float
    r_squared: float
    tau_interval: tuple

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    @property
    def C(self) -> float:
        return math.exp(self.log_C)

    def to_dict(self) -> dict:
        return {
            "periods": list(self.periods), "errors": list(self.errors),
            "tau": self.tau, "C": self.C, "r_squared": self.r_squared,
            "tau_interval": list(self.tau_interval),
        }


def fit_rate(periods, errors, confidence: float = 0.95) -> RateFit:
    """Least squares of log|e_n| on n, skipping zero errors."""
    ns = np.asarray(periods, dtype=float)
    es = np.abs(np.asarray(errors, dtype=float))
    if ns.size < 5:
        raise InsufficientData(f"need at least 5 periods, got {ns.size}")
    keep = es > 0
    if keep.sum() < 3:
        raise InsufficientData("need at least 3 nonzero errors")
    x, y = ns[keep], np.log(es[keep])
    fit = stats.linregress(x, y)
    r2 = float(fit.rvalue ** 2) if np.ptp(y) > 0 else 1.0
    dof = x.size - 2
    half = float(stats.t.ppf(0.5 + confidence / 2, dof) * fit.stderr) if dof > 0 else math.inf
    return RateFit(tuple(int(v) for v in ns), tuple(float(v) for v in es), float(fit.slope),
                   float(fit.intercept), r2,
                   (math.exp(fit.slope - half), math.exp(fit.slope + half)))


@dataclass(frozen=True)
class EquidistributionRun:
    observable: str
    reference: float
    rows: tuple
    fit: RateFit | None


def equidistribution_experiment(f: AnosovMap, observables, periods, threads: int = 1,
                                grid: int = 1024) -> list[EquidistributionRun]:
    """Errors |int phi dmu - int phi dmu^n| over n for each observable.

    Rows are (n, error, number of atoms, Z_n)."""
    measures = {n: build_weighted_measure(f, n, threads) for n in periods}
    runs = []
    for obs in observables:
        ref = srb_integral(f, obs, grid).value
        rows = tuple((n, equidistribution_error(f, obs, n, measures[n], ref), measures[n].count,
                      measures[n].Z) for n in periods)
        try:
            fit = fit_rate([r[0] for r in rows], [r[1] for r in rows])
        except InsufficientData:
            fit = None
        runs.append(EquidistributionRun(obs.name, ref, rows, fit))
    return runs


# -- su-rectangles ---------------------------------------------------------------

@dataclass(frozen=True)
class SuRectangle:
    """Points [u, s] = W^s(base(u)) meet W^u(side(s)) for base parameters
    u in [0, length] and stable parameters s in [0, height] along the stable
    side through the base anchor.

    The boundary is stored as a closed polygon on the lift, traced from the
    base segment, the stable side through the anchor, the unstable top edge
    and the stable side through the far corner."""

    map: AnosovMap
    base: LeafSegment
    length: float
    height: float
    stable_side: LeafSegment
    top: LeafSegment
    far_side: LeafSegment
    far_height: float
    polygon: np.ndarray
    corners: np.ndarray
    edges: tuple = field(repr=False, compare=False)

    @property
    def path(self) -> Path:
        return Path(self.polygon, closed=True)

    def _eigen(self, pts: np.ndarray) -> np.ndarray:
        basis = np.column_stack([self.map.linear_unstable, self.map.linear_stable])
        return pts @ np.linalg.inv(basis).T

    def contains(self, pts) -> np.ndarray:
        """Membership for wrapped or lifted points.

        In linear eigencoordinates (u, s) the base and top edges are graphs
        over u and the two stable sides are graphs over s, so a point is
        inside when it lies between both pairs of graphs."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        center = self.polygon.mean(axis=0)
        q = self._eigen(center + centered(pts - center))
        lower, upper, left, right = self.edge_graphs
        # edges are continued by their end values; the other pair of edges
        # cuts those continuations off
        s_lo = np.interp(q[:, 0], *lower)
        s_hi = np.interp(q[:, 0], *upper)
        u_lo = np.interp(q[:, 1], *left)
        u_hi = np.interp(q[:, 1], *right)
        return (q[:, 1] >= s_lo) & (q[:, 1] <= s_hi) & (q[:, 0] >= u_lo) & (q[:, 0] <= u_hi)

    @property
    def edge_graphs(self):
        """(lower, upper, left, right) edges as sorted (abscissa, ordinate)
        pairs: lower/upper as s over u, left/right as u over s."""
        base, top = self._eigen(self.edges[0]), self._eigen(self.edges[2])
        side_a, side_b = self._eigen(self.edges[3]), self._eigen(self.edges[1])
        if top[:, 1].mean() < base[:, 1].mean():
            base, top = top, base
        if side_b[:, 0].mean() < side_a[:, 0].mean():
            side_a, side_b = side_b, side_a

        def graph(c, x, y):
            order = np.argsort(c[:, x])
            return c[order, x], c[order, y]

        return graph(base, 0, 1), graph(top, 0, 1), graph(side_a, 1, 0), graph(side_b, 1, 0)

    def holonomy_coordinates(self, p) -> tuple[float, float]:
        """(base parameter of the stable holonomy, stable-side parameter of
        the unstable holonomy) for a single point."""
        u = stable_holonomy(self.map, p, self.base).param
        f_inv = self.map.inverse()
        s = stable_holonomy(f_inv, p, _as_unstable(self.stable_side, f_inv)).param
        return u, s

    def perimeter(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(np.vstack([self.polygon, self.polygon[:1]]), axis=0), axis=1)))

    def box(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Parallelogram box aligned with the linear eigendirections that
        encloses the polygon: (origin, edge1, edge2)."""
        eu, es = self.map.linear_unstable, self.map.linear_stable
        basis = np.column_stack([eu, es])
        coords = self.polygon @ np.linalg.inv(basis).T
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        pad = 1e-3 * (hi - lo) + 1e-9
        lo, hi = lo - pad, hi + pad
        return basis @ lo, eu * (hi[0] - lo[0]), es * (hi[1] - lo[1])


def _as_unstable(stable_seg: LeafSegment, f_inv: AnosovMap) -> LeafSegment:
    """A stable segment of f seen as an unstable segment of f^{-1}."""
    return LeafSegment(f_inv, "unstable", stable_seg.anchor, stable_seg.length, stable_seg.direction,
                       stable_seg.nodes, stable_seg.tangents, stable_seg.params, stable_seg.stages,
                       stable_seg.stage_tangents, stable_seg.stage_logs, stable_seg.base_offsets,
                       stable_seg.base_direction, stable_seg.base_point)


def _sample_curve(seg: LeafSegment, a: float, b: float, spacing: float) -> np.ndarray:
    k = max(2, math.ceil(abs(b - a) / spacing) + 1)
    return seg.lift_point(np.linspace(a, b, k))


def _align(points: np.ndarray, near: np.ndarray) -> np.ndarray:
    """Translate a lifted curve by the integer vector that puts its first
    point closest to ``near``."""
    return points + np.round(near - points[0])


def build_rectangle(f: AnosovMap, x0, length: float, height: float, stable_direction: int = 1,
                    spacing: float = 1e-4) -> SuRectangle:
    """su-rectangle over the base W^u piece [x0, base(length)] with a one-sided
    stable transversal of length ``height`` at x0."""
    if height <= 0 or length <= 0:
        raise ValueError("rectangle sides must be positive")
    if height > 0.1 or length > 0.5:
        raise RectangleOverlap("rectangle exceeds the local product structure scale")
    base = trace_unstable(f, x0, length)
    side = trace_stable(f, x0, height, stable_direction)
    corner_top = side.point(height)
    top = trace_unstable(f, corner_top, length * 1.5 + 0.05)
    far = base.point(length)
    try:
        hit = stable_holonomy(f, far, top, budget=3 * height)
    except NoCrossing as exc:
        raise RectangleOverlap("far stable side does not reach the top edge") from exc
    far_height = abs(hit.stable_distance)
    if far_height > 2 * height or hit.param > 2 * length:
        raise RectangleOverlap("rectangle is not embedded at this size")
    far_side = trace_stable(f, far, far_height, 1 if hit.stable_distance >= 0 else -1)
    edge_base = _sample_curve(base, 0.0, length, spacing)
    edge_far = _align(_sample_curve(far_side, 0.0, far_height, spacing), edge_base[-1])
    edge_top = _align(_sample_curve(top, hit.param, 0.0, spacing), edge_far[-1])
    edge_side = _align(_sample_curve(side, height, 0.0, spacing), edge_top[-1])
    polygon = np.vstack([edge_base, edge_far[1:], edge_top[1:], edge_side[1:-1]])
    gap = np.hypot(*(edge_side[-1] - edge_base[0]))
    if gap > 1e-8:
        raise RectangleOverlap(f"boundary does not close (gap {gap:.2e})")
    if np.ptp(polygon, axis=0).max() >= 0.5:
        raise RectangleOverlap("rectangle is too large to embed")
    corners = np.array([edge_base[0], edge_base[-1], edge_far[-1], edge_side[0]])
    return SuRectangle(f, base, float(length), float(height), side, top, far_side, far_height,
                       polygon, corners, (edge_base, edge_far, edge_top, edge_side))


def rectangle_integral(rect: SuRectangle, obs: Observable, samples: int = 1_000_000,
                       seed: int = 0) -> tuple[float, float]:
    """(area, integral of obs) over the rectangle by stratified Monte Carlo:
    one uniform point per cell of a k x k grid on the enclosing box."""
    k = int(math.isqrt(samples))
    if k * k < samples:
        k += 1
    rng = np.random.default_rng(seed)
    origin, e1, e2 = rect.box()
    jitter = rng.random((k * k, 2))
    ij = np.stack(np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), -1).reshape(-1, 2)
    uv = (ij + jitter) / k
    pts = origin + uv[:, :1] * e1 + uv[:, 1:] * e2
    inside = rect.contains(pts)
    cell = abs(e1[0] * e2[1] - e1[1] * e2[0]) / (k * k)
    area = inside.sum() * cell
    integral = float(np.sum(obs(wrap(pts[inside])))) * cell
    return float(area), integral


@dataclass(frozen=True)
class RectangleComparison:
    height: float
    lhs: float
    rhs: float
    gap: float
    area_full: float
    area_part: float


def conditional_vs_rectangle(f: AnosovMap, x0, full_length: float, point_param: float,
                             height: float, obs: Observable, samples: int = 1_000_000,
                             seed: int = 0) -> RectangleComparison:
    """Normalized conditional integral of obs over [x0, x] against the
    rectangle average over A(x, height) divided by the area of A(x0', height).

    The conditional measure is normalized to mass 1 on [x0, x0'] where
    x0' = base(full_length)."""
    if not 0 < point_param <= full_length:
        raise ValueError("point must lie on the base segment")
    base = trace_unstable(f, x0, full_length)
    dens = conditional_density(base)
    total = leafwise_integral(base, dens, 0.0, full_length)
    weighted = _weighted_leaf_integral(base, dens, obs, 0.0, point_param)
    lhs = weighted / total
    full = build_rectangle(f, x0, full_length, height)
    part = build_rectangle(f, x0, point_param, height)
    area_full, _ = rectangle_integral(full, Observable.constant(1.0), samples, seed)
    area_part, integral = rectangle_integral(part, obs, samples, seed)
    rhs = integral / area_full
    return RectangleComparison(height, lhs, rhs, abs(lhs - rhs), area_full, area_part)


def _weighted_leaf_integral(seg: LeafSegment, dens, obs: Observable, a: float, b: float) -> float:
    xg, wg = np.polynomial.legendre.leggauss(64)
    pieces = max(1, math.ceil((b - a) / 0.05))
    edges = np.linspace(a, b, pieces + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        t = 0.5 * (hi - lo) * (xg + 1) + lo
        total += 0.5 * (hi - lo) * float(np.dot(wg, dens.at(t) * obs(seg.point(t))))
    return total


# -- mollifiers ------------------------------------------------------------------

@dataclass(frozen=True)
class MollifierFamily:
    """phi^t = clip(slope * d + t, 0, 1) with d the signed distance to the
    rectangle boundary (positive inside).  phi^0 <= indicator <= phi^1, each
    member is slope-Lipschitz and the family is continuous in t."""

    rect: SuRectangle
    slope: float
    _tree: cKDTree = field(repr=False, compare=False)
    _dense: np.ndarray = field(repr=False, compare=False)

    def signed_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        center = self.rect.polygon.mean(axis=0)
        lifted = center + centered(pts - center)
        poly = self._dense
        _, idx = self._tree.query(lifted, k=2)
        best = np.full(lifted.shape[0], np.inf)
        m = poly.shape[0]
        for j in range(2):
            for off in (-1, 0):
                a = poly[(idx[:, j] + off) % m]
                b = poly[(idx[:, j] + off + 1) % m]
                ab = b - a
                w = np.clip(np.sum((lifted - a) * ab, axis=1) / np.sum(ab * ab, axis=1), 0.0, 1.0)
                d = np.hypot(*(lifted - a - w[:, None] * ab).T)
                best = np.minimum(best, d)
        inside = self.rect.contains(pts)
        return np.where(inside, best, -best)

    def member(self, t: float) -> Observable:
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must be in [0, 1]")
        slope = self.slope
        return Observable(f"mollifier(t={t:g},slope={slope:g})",
                          lambda p: np.clip(slope * self.signed_distance(p) + t, 0.0, 1.0),
                          slope, 1.0)

    def collar_area(self, samples: int = 1_000_000, seed: int = 0) -> float:
        """Monte-Carlo area of {phi^1 != phi^0} = {|d| < 1/slope}."""
        origin, e1, e2 = self.rect.box()
        reach = 1.5 / self.slope
        u = e1 / np.linalg.norm(e1)
        v = e2 / np.linalg.norm(e2)
        origin = origin - reach * (u + v) * 1.5
        e1 = e1 + 3 * reach * u
        e2 = e2 + 3 * reach * v
        rng = np.random.default_rng(seed)
        uv = rng.random((samples, 2))
        pts = origin + uv[:, :1] * e1 + uv[:, 1:] * e2
        d = self.signed_distance(pts)
        box_area = abs(e1[0] * e2[1] - e1[1] * e2[0])
        return float(np.mean(np.abs(d) < 1.0 / self.slope) * box_area)


def mollifier_family(rect: SuRectangle, slope_bound: float, spacing: float = 2e-5) -> MollifierFamily:
    if slope_bound <= 0:
        raise ValueError("slope bound must be positive")
    poly = np.vstack([rect.polygon, rect.polygon[:1]])
    seglen = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    dense = []
    for a, b, length in zip(poly[:-1], poly[1:], seglen):
        k = max(1, math.ceil(length / spacing))
        w = np.arange(k)[:, None] / k
        dense.append(a + w * (b - a))
    dense = np.vstack(dense)
    return MollifierFamily(rect, float(slope_bound), cKDTree(dense), dense)


# -- Ulam diagnostic ---------------------------------------------------------------

def ulam_density(f: AnosovMap, cells: int = 128, per_cell: int = 32, iterations: int = 200,
                 seed: int = 0) -> tuple[np.ndarray, float]:
    """Invariant density of the Ulam approximation of the transfer operator
    on a cells x cells partition, with per_cell**2 jittered samples per cell
    estimating the transition fractions; returns (density grid, L1 distance to 1)."""
    rng = np.random.default_rng(seed)
    k = per_cell
    # independent jitter per cell: a shared pattern is a union of translated
    # lattices, which A maps onto lattices and makes the count exact
    sub = (np.stack(np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), -1).reshape(-1, 2)
           + rng.random((cells * cells, k * k, 2))) / k
    cell_ij = np.stack(np.meshgrid(np.arange(cells), np.arange(cells), indexing="ij"), -1).reshape(-1, 2)
    pts = ((cell_ij[:, None, :] + sub) / cells).reshape(-1, 2)
    src = np.repeat(np.arange(cells * cells), k * k)
    img = f.apply(np.ascontiguousarray(pts))
    dst_ij = np.minimum((img * cells).astype(int), cells - 1)
    dst = dst_ij[:, 0] * cells + dst_ij[:, 1]
    P = sparse.csr_matrix((np.full(src.size, 1.0 / (k * k)), (dst, src)), shape=(cells * cells,) * 2)
    rho = np.ones(cells * cells)
    for _ in range(iterations):
        rho = P @ rho
        rho *= rho.size / rho.sum()
    return rho.reshape(cells, cells), float(np.mean(np.abs(rho - 1.0)))
