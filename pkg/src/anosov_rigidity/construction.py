"""Approximate conjugacies built from conditional measures: the heteroclinic
frame, the segment conjugacy on A^u_f, its weighted-holonomy extension h_N,
the stable-direction second stage hbar_N, and distance estimators.

All holonomies between the frame segments and arbitrary points are solved
in linearizing coordinates: H_f maps the stable and unstable foliations of f
onto the straight eigenline foliations of the linear part, so a holonomy is a
2x2 solve followed by an inversion of H_f or H_g.  Traced leaves are used for
the frame segments, densities and holonomy derivatives."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .leaves import (LeafSegment, conditional_density, holonomy_derivative, inverse_map,
                     trace_unstable, truncation_depth)
from .linearize import ComposedConjugacy, LinearizingConjugacy, NewtonDivergence
from .maps import AnosovMap, _as_points
from .torus import centered, torus_distances, wrap

LATTICE_REACH = 8
PLATEAU = 0.1
ROOT_TOL = 1e-14
MIX_FLOOR = 1e-12

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class NoHeteroclinicIntersection(RuntimeError):
    pass


class MonotonicityLoss(RuntimeError):
    pass


class HolonomyBudgetExceeded(RuntimeError):
    pass


# -- N-context -----------------------------------------------------------------

@dataclass(frozen=True)
class NContext:
    """The exponentially small permissions indexed by N: density and holonomy
    products truncated at tolerance lambda^-N, reparameterizations within
    gamma^{2N} = lambda^-N of the identity."""

    N: int = 30

    def tolerance(self, fmap: AnosovMap) -> float:
        return max(abs(fmap.lambda_u) ** (-self.N), 1e-15)

    def sigma_bound(self, fmap: AnosovMap) -> float:
        return self.tolerance(fmap)


# -- small numerical helpers -----------------------------------------------

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


def _plateau_step(u):
    """0 on [0, PLATEAU], 1 on [1 - PLATEAU, 1], quintic smoothstep between."""
    return _smoothstep((np.asarray(u, dtype=float) - PLATEAU) / (1.0 - 2.0 * PLATEAU))


def bracketed_root(func, lo, hi, f_lo=None, f_hi=None, tol=ROOT_TOL, max_iter=200):
    """Vectorized Illinois iteration for monotone functions with a sign change
    on [lo, hi]; ``func`` maps (parameters, active indices) to values."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    idx_all = np.arange(lo.size)
    f_lo = func(lo, idx_all) if f_lo is None else np.array(f_lo, dtype=float)
    f_hi = func(hi, idx_all) if f_hi is None else np.array(f_hi, dtype=float)
    if np.any(np.sign(f_lo) * np.sign(f_hi) > 0):
        raise HolonomyBudgetExceeded("root is not bracketed")
    root = np.where(np.abs(f_lo) <= np.abs(f_hi), lo, hi)
    done = (f_lo == 0) | (f_hi == 0) | (np.abs(hi - lo) <= tol)
    root[f_lo == 0] = lo[f_lo == 0]
    root[f_hi == 0] = hi[f_hi == 0]
    side = np.zeros(lo.size, dtype=int)
    for _ in range(max_iter):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            return root
        a, b, fa, fb = lo[act], hi[act], f_lo[act], f_hi[act]
        x = b - fb * (b - a) / (fb - fa)
        bad = ~np.isfinite(x) | (x <= np.minimum(a, b)) | (x >= np.maximum(a, b))
        x[bad] = 0.5 * (a + b)[bad]
        fx = func(x, act)
        root[act] = x
        hit = fx == 0
        left = np.sign(fx) == np.sign(fa)
        # replace the endpoint with the same sign; Illinois halving on repeats
        new_lo, new_hi = a.copy(), b.copy()
        new_flo, new_fhi = fa.copy(), fb.copy()
        new_lo[left], new_flo[left] = x[left], fx[left]
        new_hi[~left], new_fhi[~left] = x[~left], fx[~left]
        s = side[act]
        halve_hi = left & (s == 1)
        halve_lo = ~left & (s == -1)
        new_fhi[halve_hi] *= 0.5
        new_flo[halve_lo] *= 0.5
        side[act] = np.where(left, 1, -1)
        lo[act], hi[act], f_lo[act], f_hi[act] = new_lo, new_hi, new_flo, new_fhi
        done[act] = hit | (np.abs(new_hi - new_lo) <= tol * (1.0 + np.abs(x)))
    act = np.nonzero(~done)[0]
    if act.size:
        root[act] = 0.5 * (lo[act] + hi[act])
    return root


def _expand_bracket(func, center, scale, budget, idx=None):
    """Grow [center - w, center + w] until func changes sign."""
    n = center.size
    idx = np.arange(n) if idx is None else idx
    w = np.maximum(scale, 1e-13)
    lo, hi = center - w, center + w
    f_lo, f_hi = func(lo, idx), func(hi, idx)
    for _ in range(80):
        bad = np.sign(f_lo) * np.sign(f_hi) > 0
        if not bad.any():
            return lo, hi, f_lo, f_hi
        if np.any(w[bad] > budget):
            raise HolonomyBudgetExceeded(f"no crossing within {budget}")
        w[bad] *= 4.0
        b = np.nonzero(bad)[0]
        lo[b], hi[b] = center[b] - w[b], center[b] + w[b]
        f_lo[b], f_hi[b] = func(lo[b], idx[b]), func(hi[b], idx[b])
    raise HolonomyBudgetExceeded("bracket search did not terminate")


# -- linear geometry -------------------------------------------------------------

@dataclass(frozen=True)
class LinearGeometry:
    """Eigenline geometry of the linear part on the cover."""

    eu: np.ndarray
    es: np.ndarray

    @classmethod
    def of(cls, fmap: AnosovMap) -> "LinearGeometry":
        return cls(np.array(fmap.linear_unstable, dtype=float), np.array(fmap.linear_stable, dtype=float))

    @property
    def basis(self) -> np.ndarray:
        return np.column_stack([self.eu, self.es])

    def coords(self, X) -> np.ndarray:
        """(unstable, stable) coefficients of cover vectors."""
        return np.asarray(X, dtype=float) @ np.linalg.inv(self.basis).T

    def point(self, a, b) -> np.ndarray:
        return np.asarray(a)[..., None] * self.eu + np.asarray(b)[..., None] * self.es

    def crossings(self, P, d, e, lo, hi, forward: bool, exclude_zero: bool = False):
        """First crossing of the lines P + tau d (tau >= 0 if forward, else
        tau <= 0) with the segments {c e : lo <= c <= hi} + Z^2.

        Returns (tau, c, n) with P + tau d = c e + n."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        base = np.floor(P)
        Pw = P - base
        K = np.linalg.inv(np.column_stack([d, e]))
        w = Pw @ K.T
        rng = range(-LATTICE_REACH, LATTICE_REACH + 1)
        ns = np.array(list(itertools.product(rng, rng)), dtype=float)
        kn = ns @ K.T
        # P - n = -tau d + c e
        tau = -(w[:, None, 0] - kn[None, :, 0])
        c = w[:, None, 1] - kn[None, :, 1]
        slack = 1e-13
        ok = (c >= lo - slack) & (c <= hi + slack)
        if forward:
            ok &= tau > 1e-15 if exclude_zero else tau >= -1e-15
            key = np.where(ok, tau, np.inf)
            j = np.argmin(key, axis=1)
        else:
            ok &= tau < -1e-15 if exclude_zero else tau <= 1e-15
            key = np.where(ok, tau, -np.inf)
            j = np.argmax(key, axis=1)
        rows = np.arange(P.shape[0])
        if not np.all(ok[rows, j]):
            raise HolonomyBudgetExceeded("no crossing within the lattice search window")
        return tau[rows, j], np.clip(c[rows, j], lo, hi), ns[j] + base


# -- leaf measures ---------------------------------------------------------------

class LeafMeasure:
    """Normalized cumulative conditional measure on [t0, t1] of a segment."""

    def __init__(self, density, t0: float, t1: float):
        seg = density.segment
        inner = seg.params[(seg.params > t0) & (seg.params < t1)]
        grid = np.concatenate([[t0], inner, [t1]])
        lo, hi = grid[:-1], grid[1:]
        x = lo[:, None] + (hi - lo)[:, None] * _GL_X[None, :]
        pieces = (density.at(x.ravel()).reshape(x.shape) * _GL_W[None, :]).sum(axis=1) * (hi - lo)
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self.density = density
        self.t0, self.t1 = float(t0), float(t1)
        self.grid = grid
        self.total = float(cum[-1])
        self.cum = cum / self.total
        if not np.all(np.isfinite(self.cum)) or np.any(np.diff(self.cum) <= 0):
            raise MonotonicityLoss("conditional measure is not increasing along the segment")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        flat = np.clip(np.atleast_1d(t), self.t0, self.t1)
        k = np.clip(np.searchsorted(self.grid, flat, side="right") - 1, 0, self.grid.size - 2)
        a = self.grid[k]
        x = a[:, None] + (flat - a)[:, None] * _GL_X[None, :]
        part = (self.density.at(x.ravel()).reshape(x.shape) * _GL_W[None, :]).sum(axis=1) * (flat - a)
        out = self.cum[k] + part / self.total
        return out.reshape(t.shape)

    def rate(self, t):
        return self.density.at(np.asarray(t, dtype=float)) / self.total

    def log_rate_slope(self, t):
        return -self.density._spline(np.asarray(t, dtype=float), 1)

    def inverse(self, c):
        c = np.asarray(c, dtype=float)
        flat = np.clip(np.atleast_1d(c), 0.0, 1.0)
        t = np.interp(flat, self.cum, self.grid)
        for _ in range(30):
            step = (self.cdf(t) - flat) / self.rate(t)
            t = np.clip(t - step, self.t0, self.t1)
            if np.max(np.abs(step)) < 1e-15:
                break
        return t.reshape(c.shape)


# -- reparameterizations -------------------------------------------------------

# window profiles: q1(0) = 0, q1'(0) = 1, q2''(0) = 1, all other values and the
# first two derivatives vanish at 0 and 1
_Q1 = np.polynomial.Polynomial([0, 1, 0, -6, 8, -3])
_Q2 = np.polynomial.Polynomial([0, 0, 1, -3, 3, -1]) * 0.5
_q1, _q1d, _q1dd = _Q1, _Q1.deriv(), _Q1.deriv(2)
_q2, _q2d, _q2dd = _Q2, _Q2.deriv(), _Q2.deriv(2)


_S = np.linspace(0.0, 1.0, 2001)
Q1_MAX = float(np.abs(_q1(_S)).max())
Q2_MAX = float(np.abs(_q2(_S)).max())


@dataclass(frozen=True)
class Reparam:
    """Orientation-preserving sigma of [start, end] equal to the identity
    outside two quintic windows; sigma' and sigma'' take prescribed values at
    the endpoints."""

    start: float
    end: float
    slope0: float = 1.0
    slope1: float = 1.0
    curv0: float = 0.0
    curv1: float = 0.0
    width0: float = 0.0
    width1: float = 0.0

    @classmethod
    def within(cls, start, end, slope0, slope1, curv0, curv1, bound: float) -> "Reparam":
        span = end - start

        def width(a, c):
            w = span / 4.0
            if a != 1.0:
                w = min(w, bound / (4.0 * abs(a - 1.0) * Q1_MAX))
            if c != 0.0:
                w = min(w, math.sqrt(bound / (4.0 * abs(c) * Q2_MAX)))
            return w

        rep = cls(start, end, slope0, slope1, curv0, curv1, width(slope0, curv0), width(slope1, curv1))
        d = rep.derivative(np.concatenate([start + rep.width0 * _S, end - rep.width1 * _S]))
        if np.any(d <= 0):
            raise MonotonicityLoss("reparameterization would not be increasing")
        return rep

    def _parts(self, t):
        t = np.asarray(t, dtype=float)
        s0 = np.clip((t - self.start) / self.width0, 0, 1) if self.width0 > 0 else np.ones_like(t)
        s1 = np.clip((self.end - t) / self.width1, 0, 1) if self.width1 > 0 else np.ones_like(t)
        return t, s0, s1

    def __call__(self, t):
        t, s0, s1 = self._parts(t)
        out = t.copy()
        if self.width0 > 0:
            out = out + (self.slope0 - 1) * self.width0 * _q1(s0) + self.curv0 * self.width0 ** 2 * _q2(s0)
        if self.width1 > 0:
            out = out - (self.slope1 - 1) * self.width1 * _q1(s1) + self.curv1 * self.width1 ** 2 * _q2(s1)
        return out

    def derivative(self, t):
        t, s0, s1 = self._parts(t)
        out = np.ones_like(t)
        if self.width0 > 0:
            out = out + (self.slope0 - 1) * _q1d(s0) + self.curv0 * self.width0 * _q2d(s0)
        if self.width1 > 0:
            out = out + (self.slope1 - 1) * _q1d(s1) - self.curv1 * self.width1 * _q2d(s1)
        return out

    def second(self, t):
        t, s0, s1 = self._parts(t)
        out = np.zeros_like(t)
        if self.width0 > 0:
            out = out + (self.slope0 - 1) / self.width0 * _q1dd(s0) + self.curv0 * _q2dd(s0)
        if self.width1 > 0:
            out = out - (self.slope1 - 1) / self.width1 * _q1dd(s1) + self.curv1 * _q2dd(s1)
        return out

    @property
    def c0_deviation(self) -> float:
        return (abs(self.slope0 - 1) * self.width0 * Q1_MAX + abs(self.curv0) * self.width0 ** 2 * Q2_MAX
                + abs(self.slope1 - 1) * self.width1 * Q1_MAX + abs(self.curv1) * self.width1 ** 2 * Q2_MAX)


# -- heteroclinic frame ------------------------------------------------------------

def _oriented_trace(fmap: AnosovMap, x0, length: float, toward: np.ndarray) -> LeafSegment:
    """Unstable segment of ``fmap`` from x0 whose initial tangent points along ``toward``."""
    direction = 1 if float(np.dot(fmap.unstable_direction(x0), toward)) > 0 else -1
    return trace_unstable(fmap, x0, length, direction)


def _segment_coordinate(seg: LeafSegment, conj: LinearizingConjugacy, geom: LinearGeometry,
                        component: int, origin: np.ndarray) -> np.ndarray:
    """Linear coordinate (component 0: unstable, 1: stable) of H at the
    segment nodes, on a continuous lift starting near ``origin``."""
    lifts = seg.nodes + conj.displacement(wrap(seg.nodes))
    lifts = lifts - np.round(lifts[np.argmin(np.abs(seg.params))] - origin)
    return geom.coords(lifts)[:, component]


class FrameSegment:
    """A traced frame segment with the table of one linear coordinate of H at
    its nodes, used to locate segment points by that coordinate."""

    def __init__(self, segment: LeafSegment, conj: LinearizingConjugacy, geom: LinearGeometry,
                 component: int, sign: float = 1.0):
        self.segment, self.conj, self.geom = segment, conj, geom
        self.component, self.sign = component, float(sign)
        lifts = segment.nodes + conj.displacement(wrap(segment.nodes))
        self.lifts = lifts - np.round(lifts[np.argmin(np.abs(segment.params))])
        self.coords = self.sign * geom.coords(self.lifts)[:, component]
        if np.any(np.diff(self.coords) <= 0):
            raise MonotonicityLoss("linear coordinate is not increasing along a frame segment")

    def param_of(self, c) -> np.ndarray:
        """Arclength parameter of the segment point with (signed) linear coordinate c."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        k = np.clip(np.searchsorted(self.coords, c) - 1, 0, self.coords.size - 2)
        seg = self.segment

        def resid(t, idx):
            lift = seg.lift_point(t)
            h = lift + self.conj.displacement(wrap(lift))
            ref = np.column_stack([np.interp(t, seg.params, self.lifts[:, 0]),
                                   np.interp(t, seg.params, self.lifts[:, 1])])
            h = h - np.round(h - ref)
            return self.sign * self.geom.coords(h)[:, self.component] - c[idx]

        return bracketed_root(resid, seg.params[k], seg.params[k + 1], tol=1e-15)


@dataclass
class HeteroclinicFrame:
    f: AnosovMap
    g: AnosovMap
    conjugacy: ComposedConjugacy
    geometry: LinearGeometry
    translate: tuple
    a1: float
    b1: float
    e_range: tuple
    ebar_range: tuple
    a_marks: dict
    b_marks: dict
    e_marks: dict
    ebar_marks: dict
    points: dict
    images: dict
    unstable_f: LeafSegment
    stable_f: LeafSegment
    unstable_g: LeafSegment
    stable_g: LeafSegment
    u_breaks: tuple
    s_breaks: tuple
    u_breaks_g: tuple
    s_breaks_g: tuple
    residuals: dict

    @property
    def Hf(self) -> LinearizingConjugacy:
        return self.conjugacy.forward

    @property
    def Hg(self) -> LinearizingConjugacy:
        return self.conjugacy.inverse_of

    def to_dict(self) -> dict:
        return {
            "translate": list(self.translate),
            "points": {k: [float(v[0]), float(v[1])] for k, v in self.points.items()},
            "images": {k: [float(v[0]), float(v[1])] for k, v in self.images.items()},
            "unstable_length": float(self.u_breaks[-1]),
            "stable_length": float(self.s_breaks[-1]),
            "unstable_breaks": [float(v) for v in self.u_breaks],
            "stable_breaks": [float(v) for v in self.s_breaks],
            "transversal": {"stable_range": [float(v) for v in self.e_range],
                            "unstable_range": [float(v) for v in self.ebar_range]},
            "residuals": {k: float(v) for k, v in self.residuals.items()},
        }


def _linear_marks(geom: LinearGeometry, m: np.ndarray, a1: float, b1: float):
    """Linear coordinates of the frame crossings."""
    rng = range(-2 * LATTICE_REACH, 2 * LATTICE_REACH + 1)
    M = np.column_stack([geom.eu, -geom.es])
    e_hits, ebar_hits = [], []
    lo_b, hi_b = min(0.0, b1), max(0.0, b1)
    for n in itertools.product(rng, rng):
        # m + b es = a eu + n with 0 < a < a1
        a, b = np.linalg.solve(M, m - np.array(n, dtype=float))
        if 1e-12 < a < a1 - 1e-12 and not (lo_b - 1e-12 <= b <= hi_b + 1e-12):
            e_hits.append((b, a))
        # a eu = m + b es + n with b strictly inside A^s
        a, b = np.linalg.solve(M, m + np.array(n, dtype=float))
        if lo_b + 1e-12 < b < hi_b - 1e-12 and not (-1e-12 <= a <= a1 + 1e-12):
            ebar_hits.append((a, b))
    if not e_hits or not ebar_hits:
        raise NoHeteroclinicIntersection("extensions of the frame segments do not return")
    above = [h for h in e_hits if h[0] > hi_b]
    below = [h for h in e_hits if h[0] < lo_b]
    right = [h for h in ebar_hits if h[0] > a1]
    left = [h for h in ebar_hits if h[0] < 0]
    if not (above and below and right and left):
        raise NoHeteroclinicIntersection("an extension does not return within the search window")
    b_hi, a_hi_e = min(above)
    b_lo, a_lo_e = max(below)
    a_hi, b_hi_e = min(right)
    a_lo, b_lo_e = max(left)
    # x0' continues A^s beyond x0 (b = 0), x1' beyond x1 (b = b1)
    if b1 < 0:
        x0p, x1p = (b_hi, a_hi_e), (b_lo, a_lo_e)
    else:
        x0p, x1p = (b_lo, a_lo_e), (b_hi, a_hi_e)
    x0pp, x1pp = (a_lo, b_lo_e), (a_hi, b_hi_e)
    return (b_lo, b_hi), (a_lo, a_hi), x0p, x1p, x0pp, x1pp


def build_frame(f: AnosovMap, g: AnosovMap | None = None, conjugacy: ComposedConjugacy | None = None,
                translate=(1, 0)) -> HeteroclinicFrame:
    """Frame anchored at the fixed point x0 = origin.

    x1 is the heteroclinic point of W^u(x0) and W^s(x0) corresponding to the
    lattice translate; the crossings are located in linearizing coordinates
    and then checked against traced leaves."""
    g = f if g is None else g
    conj = conjugacy or ComposedConjugacy.between(f, g)
    x0 = np.zeros(2)
    if float(torus_distances(f.apply(x0[None, :]), x0[None, :])[0]) > 1e-12:
        raise ValueError("the origin is not a fixed point of f")
    if float(torus_distances(g.apply(x0[None, :]), x0[None, :])[0]) > 1e-12:
        raise ValueError("the origin is not a fixed point of g")
    geom = LinearGeometry.of(f)
    m = np.array(translate, dtype=float)
    a1, b1 = np.linalg.solve(np.column_stack([geom.eu, -geom.es]), m)
    if a1 < 0:
        m = -m
        a1, b1 = -a1, -b1
    e_range, ebar_range, x0p, x1p, x0pp, x1pp = _linear_marks(geom, m, a1, b1)
    a_marks = {"x0": 0.0, "x0p": x0p[1], "x1p": x1p[1], "x1": a1}
    b_marks = {"x0": 0.0, "x0pp": x0pp[1], "x1pp": x1pp[1], "x1": b1}
    lin = {"x0": np.zeros(2), "x1": a1 * geom.eu, "x0p": x0p[1] * geom.eu, "x1p": x1p[1] * geom.eu,
           "x0pp": x0pp[0] * geom.eu, "x1pp": x1pp[0] * geom.eu}
    Hf, Hg = conj.forward, conj.inverse_of
    names = list(lin)
    L = np.array([lin[k] for k in names])
    pts = Hf.invert(wrap(L), seed=wrap(L))
    pts[0] = x0
    points = dict(zip(names, pts))
    if f == g:
        ims = pts.copy()
    else:
        ims = Hg.invert(wrap(L), seed=pts)
        ims[0] = x0
    images = dict(zip(names, ims))

    up = geom.eu
    sdir = math.copysign(1.0, b1) * geom.es
    fi, gi = inverse_map(f), inverse_map(g)
    res = {}

    def seg_len(fmap, start, end, guess, toward):
        seg = _oriented_trace(fmap, start, 1.4 * guess + 0.05, toward)
        t = seg.project(end)
        res_d = seg.distance_to(end)
        return seg, t, res_d

    probe, t_x1, d1 = seg_len(f, x0, points["x1"], a1, up)
    res["x1_on_unstable"] = d1
    Au_f = _oriented_trace(f, x0, t_x1, up)
    probe, s_x1, d2 = seg_len(fi, x0, points["x1"], abs(b1), sdir)
    res["x1_on_stable"] = d2
    As_f = _oriented_trace(fi, x0, s_x1, sdir)
    _, tg, dg1 = seg_len(g, x0, images["x1"], a1, up)
    Au_g = _oriented_trace(g, x0, tg, up)
    _, sg, dg2 = seg_len(gi, x0, images["x1"], abs(b1), sdir)
    As_g = _oriented_trace(gi, x0, sg, sdir)
    res["h_x1_on_unstable"] = dg1
    res["h_x1_on_stable"] = dg2

    u_marks = {k: Au_f.project(points[k]) for k in ("x0p", "x1p")}
    s_marks = {k: As_f.project(points[k]) for k in ("x0pp", "x1pp")}
    res["x0p_on_unstable"] = Au_f.distance_to(points["x0p"])
    res["x1p_on_unstable"] = Au_f.distance_to(points["x1p"])
    res["x0pp_on_stable"] = As_f.distance_to(points["x0pp"])
    res["x1pp_on_stable"] = As_f.distance_to(points["x1pp"])
    # the crossings also lie on the extensions through x0
    for key, b in (("x0p", x0p[0]), ("x1p", x1p[0])):
        ext = _oriented_trace(fi, x0, abs(b) * 1.25 + 0.02, math.copysign(1.0, b) * geom.es)
        res[f"{key}_on_extension"] = ext.distance_to(points[key])
    for key, a in (("x0pp", x0pp[0]), ("x1pp", x1pp[0])):
        ext = _oriented_trace(f, x0, abs(a) * 1.25 + 0.02, math.copysign(1.0, a) * geom.eu)
        res[f"{key}_on_extension"] = ext.distance_to(points[key])
    u_breaks = tuple(sorted([0.0, u_marks["x0p"], u_marks["x1p"], t_x1]))
    s_breaks = tuple(sorted([0.0, s_marks["x0pp"], s_marks["x1pp"], s_x1]))
    ug = sorted([0.0, Au_g.project(images["x0p"]), Au_g.project(images["x1p"]), tg])
    sg_ = sorted([0.0, As_g.project(images["x0pp"]), As_g.project(images["x1pp"]), sg])
    res["h_x0p_on_unstable"] = Au_g.distance_to(images["x0p"])
    res["h_x1p_on_unstable"] = Au_g.distance_to(images["x1p"])
    res["h_x0pp_on_stable"] = As_g.distance_to(images["x0pp"])
    res["h_x1pp_on_stable"] = As_g.distance_to(images["x1pp"])
    worst = max(res.values())
    if worst > 1e-8:
        raise NoHeteroclinicIntersection(f"frame residual {worst:.2e} exceeds 1e-8")
    return HeteroclinicFrame(f, g, conj, geom, tuple(int(v) for v in m), float(a1), float(b1),
                             tuple(float(v) for v in e_range), tuple(float(v) for v in ebar_range),
                             a_marks, b_marks, {"x0p": x0p[0], "x1p": x1p[0]},
                             {"x0pp": x0pp[0], "x1pp": x1pp[0]}, points, images, Au_f, As_f, Au_g, As_g,
                             u_breaks, s_breaks, tuple(ug), tuple(sg_), res)


# -- segment conjugacy ---------------------------------------------------------------

@dataclass
class PieceMap:
    """(I_G)^{-1} o I_F on one subsegment, composed with a reparameterization."""

    source: LeafMeasure
    target: LeafMeasure
    sigma: Reparam | None = None

    def natural(self, t):
        return self.target.inverse(self.source.cdf(t))

    def natural_derivative(self, t):
        s = self.natural(t)
        return self.source.rate(t) / self.target.rate(s)

    def natural_second(self, t):
        s = self.natural(t)
        d = self.source.rate(t) / self.target.rate(s)
        return d * (self.source.log_rate_slope(t) - self.target.log_rate_slope(s) * d)

    def __call__(self, t):
        return self.natural(self.sigma(t) if self.sigma is not None else t)

    def derivative(self, t):
        if self.sigma is None:
            return self.natural_derivative(t)
        return self.natural_derivative(self.sigma(t)) * self.sigma.derivative(t)


@dataclass
class SegmentConjugacy:
    """h_N on a frame segment: three normalized-measure pieces glued with
    derivative-matching reparameterizations."""

    source: LeafSegment
    target: LeafSegment
    breaks: tuple
    target_breaks: tuple
    pieces: list
    derivative_targets: list
    depth: int
    sigma_bound: float

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, 2)
        out = np.empty_like(t)
        for i, piece in enumerate(self.pieces):
            sel = k == i
            if sel.any():
                out[sel] = piece(t[sel])
        return out

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, 2)
        out = np.empty_like(t)
        for i, piece in enumerate(self.pieces):
            sel = k == i
            if sel.any():
                out[sel] = piece.derivative(t[sel])
        return out

    def one_sided_derivatives(self) -> list[tuple[float, float]]:
        """(left, right) derivatives at the two interior breakpoints."""
        out = []
        for j in (1, 2):
            b = self.breaks[j]
            out.append((float(self.pieces[j - 1].derivative(np.array([b]))[0]),
                        float(self.pieces[j].derivative(np.array([b]))[0])))
        return out

    def derivative_residual(self) -> float:
        worst = 0.0
        for j, (lft, rgt) in enumerate(self.one_sided_derivatives(), start=1):
            tgt = self.derivative_targets[j]
            worst = max(worst, abs(lft - tgt), abs(rgt - tgt))
        end = float(self.pieces[2].derivative(np.array([self.breaks[3]]))[0])
        return max(worst, abs(end - self.derivative_targets[3]))

    def endpoint_residual(self) -> float:
        vals = self(np.array(self.breaks))
        return float(np.max(np.abs(vals - np.array(self.target_breaks))))

    @property
    def sigma_deviation(self) -> float:
        return max(p.sigma.c0_deviation for p in self.pieces)


def build_segment_conjugacy(seg_f: LeafSegment, seg_g: LeafSegment, breaks, target_breaks,
                            break_points, break_images, reaches, context: NContext) -> SegmentConjugacy:
    """Segment conjugacy along unstable segments of F = seg_f.owner and
    G = seg_g.owner with the endpoint derivative condition

        D h_N(x_i) = D hol^{s,G}_{h x0, h x_i}(h x0) D h_N(x0) D hol^{s,F}_{x_i, x0}(x_i)."""
    F, G = seg_f.owner, seg_g.owner
    tol = context.tolerance(F)
    span = seg_f.t_max - seg_f.t_min
    depth = truncation_depth(F, span, tol)
    depth_g = truncation_depth(G, seg_g.t_max - seg_g.t_min, tol)
    df = conditional_density(seg_f, 0.0, depth)
    dg = conditional_density(seg_g, 0.0, depth_g)
    pieces = [PieceMap(LeafMeasure(df, breaks[i], breaks[i + 1]),
                       LeafMeasure(dg, target_breaks[i], target_breaks[i + 1])) for i in range(3)]
    d0 = float(pieces[0].natural_derivative(np.array([breaks[0]]))[0])
    targets = [d0]
    for j in (1, 2, 3):
        reach = reaches[j]
        hd = truncation_depth(F, reach, tol, contracting=True)
        hgd = truncation_depth(G, reach, tol, contracting=True)
        dhf = holonomy_derivative(F, break_points[j], break_points[0], hd, reach=reach)
        dhg = holonomy_derivative(G, break_images[0], break_images[j], hgd, reach=reach)
        targets.append(dhg * d0 * dhf)
    nat_d = [(float(p.natural_derivative(np.array([breaks[i]]))[0]),
              float(p.natural_derivative(np.array([breaks[i + 1]]))[0])) for i, p in enumerate(pieces)]
    nat_dd = [(float(p.natural_second(np.array([breaks[i]]))[0]),
               float(p.natural_second(np.array([breaks[i + 1]]))[0])) for i, p in enumerate(pieces)]
    slopes = [(targets[i] / nat_d[i][0], targets[i + 1] / nat_d[i][1]) for i in range(3)]
    curv = [[0.0, 0.0] for _ in range(3)]
    for j in (1, 2):
        left, right = j - 1, j
        sl, sr = slopes[left][1], slopes[right][0]
        second_l = nat_dd[left][1] * sl * sl
        second_r = nat_dd[right][0] * sr * sr
        common = 0.5 * (second_l + second_r)
        curv[left][1] = (common - second_l) / nat_d[left][1]
        curv[right][0] = (common - second_r) / nat_d[right][0]
    bound = context.sigma_bound(F)
    for i, p in enumerate(pieces):
        p.sigma = Reparam.within(breaks[i], breaks[i + 1], slopes[i][0], slopes[i][1],
                                 curv[i][0], curv[i][1], bound / 3.0)
    return SegmentConjugacy(seg_f, seg_g, tuple(breaks), tuple(target_breaks), pieces, targets,
                            depth, bound)


# -- approximate conjugacy ----------------------------------------------------

@dataclass
class ApproxConjugacy:
    frame: HeteroclinicFrame
    context: NContext
    unstable_part: SegmentConjugacy
    stable_part: SegmentConjugacy | None
    u_coords: FrameSegment
    s_coords: FrameSegment

    @property
    def geometry(self) -> LinearGeometry:
        return self.frame.geometry

    # weights ------------------------------------------------------------
    def rho(self, P) -> np.ndarray:
        """Weight of the "y" transport: constant on unstable pieces between
        crossings of the stable transversal E through x0, read off at the
        backward crossing with E."""
        geom, fr = self.geometry, self.frame
        _, b, _ = geom.crossings(P, geom.eu, geom.es, fr.e_range[0], fr.e_range[1], forward=False)
        b_lo, b_hi = fr.e_range
        return np.where(b >= 0, _plateau_step(b / b_hi), 1.0 - _plateau_step(b / b_lo))

    def rho_bar(self, P) -> np.ndarray:
        """Weight of the "ybar" transport: constant on stable pieces between
        crossings of the unstable transversal through x0."""
        geom, fr = self.geometry, self.frame
        sdir = math.copysign(1.0, fr.b1) * geom.es
        _, a, _ = geom.crossings(P, sdir, geom.eu, fr.ebar_range[0], fr.ebar_range[1], forward=False)
        a_lo, a_hi = fr.ebar_range
        return np.where(a >= 0, _plateau_step(a / a_hi), 1.0 - _plateau_step(a / a_lo))

    # stage 1 ---------------------------------------------------------------
    def _transport_u(self, P, forward: bool):
        """Stable-holonomy transport of h_N|A^u from the first crossing of the
        stable line of P with A^u onto the unstable line of P in g's linear
        coordinates.  Returns the unstable coefficient of the landing point."""
        geom, fr = self.geometry, self.frame
        tau, c, n = geom.crossings(P, geom.es, geom.eu, 0.0, fr.a1, forward=forward)
        t_f = self.u_coords.param_of(c)
        s_g = self.unstable_part(t_f)
        w = fr.unstable_g.point(s_g)
        W = fr.Hg.evaluate_lift(w)
        ref = geom.point(c, 0.0) + n
        W = ref + centered(W - ref)
        return geom.coords(W - P)[:, 0]

    def _g_unstable_curve(self, P):
        geom = self.geometry
        Hg = self.frame.Hg

        def curve(t, idx):
            X = P[idx] + geom.point(t, 0.0)
            return Hg.invert(wrap(X), seed=self._seed_g(X))

        return curve

    def _seed_g(self, X):
        return wrap(X - self.frame.Hg.displacement(wrap(X)))

    def _mix(self, curve, t_z, t_y, wy):
        """Point at arclength fraction wy from curve(t_z) toward curve(t_y)."""
        n = t_z.size
        idx = np.arange(n)
        q_a = curve(t_z, idx)
        q_b = curve(t_y, idx)
        chord = centered(q_b - q_a)
        L = np.hypot(chord[:, 0], chord[:, 1])
        out = np.empty((n, 2))
        small = L < MIX_FLOOR
        if small.any():
            s = np.nonzero(small)[0]
            out[s] = curve((1 - wy[s]) * t_z[s] + wy[s] * t_y[s], s)
        big = np.nonzero(~small)[0]
        if big.size:
            unit = chord[big] / L[big, None]
            target = wy[big] * L[big]

            def proj(t, loc):
                q = curve(t, big[loc])
                d = centered(q - q_a[big[loc]])
                return (d * unit[loc]).sum(axis=1) - target[loc]

            end_w = (wy[big] <= 0) | (wy[big] >= 1)
            tz, ty = t_z[big], t_y[big]
            f_lo = -target
            f_hi = L[big] - target
            roots = bracketed_root(proj, np.minimum(tz, ty), np.maximum(tz, ty),
                                   np.where(tz <= ty, f_lo, f_hi), np.where(tz <= ty, f_hi, f_lo))
            pts = curve(roots, big)
            pts[end_w & (wy[big] >= 1)] = q_b[big][end_w & (wy[big] >= 1)]
            pts[end_w & (wy[big] <= 0)] = q_a[big][end_w & (wy[big] <= 0)]
            out[big] = pts
        return wrap(out)

    def evaluate_hN(self, p) -> np.ndarray:
        pts, single = _as_points(p)
        pts = wrap(pts)
        P = self.frame.Hf.evaluate_lift(pts)
        t_y = self._transport_u(P, True)
        t_z = self._transport_u(P, False)
        wy = self.rho(P)
        out = self._mix(self._g_unstable_curve(P), t_z, t_y, wy)
        return out[0] if single else out

    __call__ = evaluate_hN

    # stage 2 ---------------------------------------------------------------
    def _stable_curve(self, P):
        """tau -> h_N(W^s_f(p) at linear stable coordinate tau)."""
        geom = self.geometry
        Hf = self.frame.Hf

        def curve(t, idx):
            X = P[idx] + geom.point(0.0, t)
            x = Hf.invert(wrap(X), seed=wrap(X - Hf.displacement(wrap(X))))
            return self.evaluate_hN(x)

        return curve

    def _transport_s(self, P, forward: bool, curve):
        """Unstable-holonomy transport of hbar_N|A^s from the first crossing of
        the unstable line of P with A^s onto h_N(W^s_f(p)); returns the stable
        coordinate of the landing point on that curve."""
        geom, fr = self.geometry, self.frame
        lo_b, hi_b = min(0.0, fr.b1), max(0.0, fr.b1)
        tau, c, n = geom.crossings(P, geom.eu, geom.es, lo_b, hi_b, forward=forward)
        t_f = self.s_coords.param_of(math.copysign(1.0, fr.b1) * c)
        s_g = self.stable_part(t_f)
        v = fr.stable_g.point(s_g)
        V = fr.Hg.evaluate_lift(v)
        ref = geom.point(0.0, c) + n
        V = ref + centered(V - ref)
        beta_v = geom.coords(V - P)[:, 1]
        Hg = fr.Hg

        def gap(t, idx):
            q = curve(t, idx)
            Q = Hg.evaluate_lift(q)
            r = P[idx] + geom.point(0.0, t)
            Q = r + centered(Q - r)
            return geom.coords(Q - P[idx])[:, 1] - beta_v[idx]

        g0 = gap(beta_v, np.arange(P.shape[0]))
        lo, hi, flo, fhi = _expand_bracket(gap, beta_v.copy(), 2.0 * np.abs(g0) + 1e-12, budget=0.5)
        return bracketed_root(gap, lo, hi, flo, fhi)

    def evaluate_hbarN(self, p) -> np.ndarray:
        if self.stable_part is None:
            raise RuntimeError("stable stage not built")
        pts, single = _as_points(p)
        pts = wrap(pts)
        P = self.frame.Hf.evaluate_lift(pts)
        curve = self._stable_curve(P)
        t_y = self._transport_s(P, True, curve)
        t_z = self._transport_s(P, False, curve)
        wy = self.rho_bar(P)
        out = self._mix(curve, t_z, t_y, wy)
        return out[0] if single else out

    def invert_hbarN(self, targets, seed, max_steps: int = 40, tol: float = 1e-12) -> np.ndarray:
        """Solve hbar_N(q) = target by chord Newton with a finite-difference
        Jacobian at the seed."""
        tgt = wrap(np.atleast_2d(targets))
        q = wrap(np.atleast_2d(seed)).copy()
        step = 1e-6
        base = self.evaluate_hbarN(q)
        cols = []
        for e in (np.array([step, 0.0]), np.array([0.0, step])):
            cols.append(centered(self.evaluate_hbarN(wrap(q + e)) - base) / step)
        J = np.stack(cols, axis=-1)
        Jinv = np.linalg.inv(J)
        val = base
        for _ in range(max_steps):
            r = centered(val - tgt)
            err = np.hypot(r[:, 0], r[:, 1])
            if err.max() < tol:
                return q
            q = wrap(q - np.einsum("nij,nj->ni", Jinv, r))
            val = self.evaluate_hbarN(q)
        raise NewtonDivergence(f"inversion of hbar_N did not converge (residual {err.max():.2e})")


def _e_coord(frame: HeteroclinicFrame, key: str) -> float:
    return frame.e_marks[key]


def build_approx_conjugacy(frame: HeteroclinicFrame, context: NContext = NContext(),
                           stable_stage: bool = True) -> ApproxConjugacy:
    P = frame.points
    I = frame.images
    ub, ubg = frame.u_breaks, frame.u_breaks_g
    order_u = sorted(["x0", "x0p", "x1p", "x1"], key=lambda k: frame.a_marks[k])
    # connecting leaves: E (stable, coordinate b) for A^u, the unstable
    # extension (coordinate a) for A^s
    e_coord = {"x0": 0.0, "x0p": _e_coord(frame, "x0p"), "x1p": _e_coord(frame, "x1p"), "x1": frame.b1}
    reach_u = [1.25 * abs(e_coord[k]) + 0.02 for k in order_u]
    unstable_part = build_segment_conjugacy(frame.unstable_f, frame.unstable_g, ub, ubg,
                                            [P[k] for k in order_u], [I[k] for k in order_u],
                                            reach_u, context)
    sb, sbg = frame.s_breaks, frame.s_breaks_g
    order_s = sorted(["x0", "x0pp", "x1pp", "x1"], key=lambda k: abs(frame.b_marks[k]))
    stable_part = None
    if stable_stage:
        ebar = {"x0": 0.0, "x0pp": frame.ebar_marks["x0pp"], "x1pp": frame.ebar_marks["x1pp"], "x1": frame.a1}
        reach_s = [1.25 * abs(ebar[k]) + 0.02 for k in order_s]
        stable_part = build_segment_conjugacy(frame.stable_f, frame.stable_g, sb, sbg,
                                              [P[k] for k in order_s], [I[k] for k in order_s],
                                              reach_s, context)
    geom = frame.geometry
    s_sign = math.copysign(1.0, frame.b1)
    return ApproxConjugacy(frame, context, unstable_part, stable_part,
                           FrameSegment(frame.unstable_f, frame.Hf, geom, 0),
                           FrameSegment(frame.stable_f, frame.Hf, geom, 1, s_sign))


# -- distances -------------------------------------------------------------------

def sample_grid(k: int) -> np.ndarray:
    """Cell centers of a k x k grid."""
    c = (np.arange(k) + 0.5) / k
    X, Y = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def c0_distance(approx: ApproxConjugacy, grid: np.ndarray, stage: int = 2) -> float:
    """max over the grid of d(h(p), hbar_N(p)) (or h_N for stage 1)."""
    h = approx.frame.conjugacy.evaluate(grid)
    est = approx.evaluate_hbarN(grid) if stage == 2 else approx.evaluate_hN(grid)
    return float(torus_distances(h, est).max())


def inverse_c0_distance(approx: ApproxConjugacy, grid: np.ndarray) -> float:
    """max over the grid of d(h^{-1}(q), hbar_N^{-1}(q))."""
    conj = approx.frame.conjugacy
    pre = conj.reversed().evaluate(grid)
    inv = approx.invert_hbarN(grid, seed=pre)
    return float(torus_distances(pre, inv).max())


@dataclass(frozen=True)
class C1Report:
    value_part: float
    jacobian_part: float

    @property
    def total(self) -> float:
        return self.value_part + self.jacobian_part


def c1_distance_sampled(f: AnosovMap, g: AnosovMap, approx: ApproxConjugacy, grid: np.ndarray,
                        fd_step: float = 1e-4) -> C1Report:
    """Sampled C^1 distance between f and f_N = hbar_N^{-1} o g o hbar_N:
    max |f - f_N| plus the max central-difference Jacobian discrepancy."""
    n = grid.shape[0]
    offsets = np.array([[0, 0], [fd_step, 0], [-fd_step, 0], [0, fd_step], [0, -fd_step]])
    stencil = wrap((grid[:, None, :] + offsets[None, :, :]).reshape(-1, 2))
    X = approx.evaluate_hbarN(stencil)
    Y = g.apply(X)
    Z = approx.invert_hbarN(Y, seed=f.apply(stencil))
    FN = Z.reshape(n, 5, 2)
    F = f.apply(stencil).reshape(n, 5, 2)
    value = float(torus_distances(FN[:, 0], F[:, 0]).max())

    def jac(V):
        cx = centered(V[:, 1] - V[:, 2]) / (2 * fd_step)
        cy = centered(V[:, 3] - V[:, 4]) / (2 * fd_step)
        return np.stack([cx, cy], axis=-1)

    diff = jac(FN) - jac(F)
    jac_part = float(np.abs(diff).reshape(n, -1).max())
    return C1Report(value, jac_part)


@dataclass(frozen=True)
class ContextResult:
    N: int
    c0: float
    c0_stage1: float
    c1_value: float
    c1_jacobian: float
    unstable_derivative_residual: float
    stable_derivative_residual: float
    sigma_deviation: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def run_contexts(frame: HeteroclinicFrame, contexts, grid_size: int = 20, c1_grid_size: int = 6,
                 fd_step: float = 1e-4) -> list[ContextResult]:
    grid = sample_grid(grid_size)
    c1_grid = sample_grid(c1_grid_size)
    out = []
    for N in contexts:
        approx = build_approx_conjugacy(frame, NContext(int(N)))
        c1 = c1_distance_sampled(frame.f, frame.g, approx, c1_grid, fd_step)
        out.append(ContextResult(
            int(N), c0_distance(approx, grid, 2), c0_distance(approx, grid, 1), c1.value_part,
            c1.jacobian_part, approx.unstable_part.derivative_residual(),
            approx.stable_part.derivative_residual(),
            max(approx.unstable_part.sigma_deviation, approx.stable_part.sigma_deviation)))
    return out


def construction_report(frame: HeteroclinicFrame, results: list[ContextResult]) -> dict:
    return {"frame": frame.to_dict(), "contexts": [r.to_dict() for r in results]}


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
