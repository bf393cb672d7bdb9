"""Unstable and stable leaf segments, SRB conditional densities along them,
leafwise integrals and stable holonomies.

A leaf segment through x0 is built by the graph transform: a short straight
piece through f^{-n}(x0) along the unstable direction is pushed forward n
times.  Every pushed node carries its own backward orbit (the intermediate
stages), so orbit sums along the leaf are evaluated on exactly aligned
orbits instead of on separately iterated points, whose along-leaf error
grows like lambda^n times the rounding level.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels as K
from .maps import AnosovMap
from .torus import TorusPoint, centered, wrap

MAX_STEP = 1e-3
MAX_LENGTH = 10.0
PRECISION_FLOOR = 1e-18
FD_STEP = 1e-6

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class StepCollapse(RuntimeError):
    """Leaf construction could not resolve the curve at the requested length."""


class NoCrossing(RuntimeError):
    """The stable leaf does not cross the target segment within the budget."""


@functools.lru_cache(maxsize=64)
def inverse_map(fmap: AnosovMap) -> AnosovMap:
    return fmap.inverse()


@functools.lru_cache(maxsize=64)
def _rates(fmap: AnosovMap):
    return fmap.measure_rates(samples=2000, steps=10)


def _c2_norm(fmap: AnosovMap) -> float:
    """Bound on the second derivative of the shear parts."""
    shears = fmap.shears + fmap.pre_shears
    return sum(abs(s.amplitude) * 2 * math.pi * s.frequency for s in shears)


def truncation_depth(fmap: AnosovMap, length: float, tol: float = 1e-10,
                     contracting: bool = False) -> int:
    """Smallest K with |f|_{C^2}/mu * sum_{i>K} mu^{-i} * length < tol, where mu
    is the weakest expansion (of f^{-1} along stable leaves if contracting)."""
    c2 = _c2_norm(fmap)
    if c2 == 0.0 or length == 0.0:
        return 1
    r = _rates(fmap)
    mu = 1.0 / r.nu0 if contracting else r.mu1
    const = c2 / mu * abs(length) / (mu - 1.0)
    return max(1, math.ceil(math.log(const / tol) / math.log(mu)))


# -- geometric Hermite pieces ------------------------------------------------

def _hermite(p0, p1, t0, t1, tau):
    """Points and derivatives of the cubic through p0, p1 with end tangents
    scaled by the chord.  Shapes (M, 2) for the data and (M,) or (M, Q) for
    tau."""
    c = np.linalg.norm(p1 - p0, axis=-1)[..., None]
    m0, m1 = c * t0, c * t1
    tau = np.asarray(tau)
    shape = tau.shape
    if tau.ndim == 1:
        tau = tau[:, None]
    t2, t3 = tau * tau, tau * tau * tau
    h00, h10, h01, h11 = 2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + tau, -2 * t3 + 3 * t2, t3 - t2
    d00, d10, d01, d11 = 6 * t2 - 6 * tau, 3 * t2 - 4 * tau + 1, -6 * t2 + 6 * tau, 3 * t2 - 2 * tau
    e00, e10, e01, e11 = 12 * tau - 6, 6 * tau - 4, -12 * tau + 6, 6 * tau - 2
    P = [a[:, None, :] for a in (p0, m0, p1, m1)]
    pos = h00[..., None] * P[0] + h10[..., None] * P[1] + h01[..., None] * P[2] + h11[..., None] * P[3]
    vel = d00[..., None] * P[0] + d10[..., None] * P[1] + d01[..., None] * P[2] + d11[..., None] * P[3]
    acc = e00[..., None] * P[0] + e10[..., None] * P[1] + e01[..., None] * P[2] + e11[..., None] * P[3]
    if len(shape) == 1:
        return pos[:, 0], vel[:, 0], acc[:, 0]
    return pos, vel, acc


def _piece_lengths(p0, p1, t0, t1, upto=None):
    """Arclength of each Hermite piece on [0, upto] (upto defaults to 1)."""
    upto = np.ones(p0.shape[0]) if upto is None else np.asarray(upto, dtype=float)
    tau = upto[:, None] * _GL_X[None, :]
    _, vel, _ = _hermite(p0, p1, t0, t1, tau)
    speed = np.linalg.norm(vel, axis=-1)
    return upto * (speed @ _GL_W)


@dataclass(frozen=True)
class LeafSegment:
    """Arclength-parameterized piece of an unstable (or stable) leaf.

    ``nodes`` are lifts forming a continuous curve on the cover, ``params``
    their arclength coordinates with 0 at the anchor.  Valid parameters are
    [t_min, t_max]; the requested piece is [0, length].  ``stages[j]`` holds
    the node positions after j of the n forward pushes, so stage n - k is the
    k-th backward image of the final curve under the pushing map."""

    owner: AnosovMap
    kind: str
    anchor: TorusPoint
    length: float
    direction: int
    nodes: np.ndarray
    tangents: np.ndarray
    params: np.ndarray
    stages: np.ndarray
    stage_tangents: np.ndarray
    stage_logs: np.ndarray
    base_offsets: np.ndarray
    base_direction: np.ndarray
    base_point: np.ndarray

    @property
    def push_map(self) -> AnosovMap:
        return self.owner if self.kind == "unstable" else inverse_map(self.owner)

    @property
    def depth(self) -> int:
        return self.stages.shape[0] - 1

    @property
    def t_min(self) -> float:
        return float(self.params[0])

    @property
    def t_max(self) -> float:
        return float(self.params[-1])

    @property
    def max_step(self) -> float:
        return float(np.max(np.diff(self.params)))

    def _locate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t_min - 1e-12) or np.any(t > self.t_max + 1e-12):
            raise ValueError(f"parameter outside [{self.t_min:.6g}, {self.t_max:.6g}]")
        idx = np.clip(np.searchsorted(self.params, t, side="right") - 1, 0, self.params.size - 2)
        p0, p1 = self.nodes[idx], self.nodes[idx + 1]
        t0, t1 = self.tangents[idx], self.tangents[idx + 1]
        target = t - self.params[idx]
        full = self.params[idx + 1] - self.params[idx]
        tau = np.clip(target / full, 0.0, 1.0)
        for _ in range(4):
            arc = _piece_lengths(p0, p1, t0, t1, tau)
            _, vel, _ = _hermite(p0, p1, t0, t1, tau)
            tau = np.clip(tau - (arc - target) / np.linalg.norm(vel, axis=-1), 0.0, 1.0)
        return idx, tau, p0, p1, t0, t1

    def lift_point(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        idx, tau, p0, p1, t0, t1 = self._locate(t)
        pos, _, _ = _hermite(p0, p1, t0, t1, tau)
        return pos[0] if scalar else pos

    def point(self, t) -> np.ndarray:
        return wrap(self.lift_point(t))

    def tangent(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        idx, tau, p0, p1, t0, t1 = self._locate(t)
        _, vel, _ = _hermite(p0, p1, t0, t1, tau)
        out = vel / np.linalg.norm(vel, axis=-1, keepdims=True)
        return out[0] if scalar else out

    def project(self, p) -> float:
        """Parameter of the point of the segment closest to p (mod Z^2).

        Looks only near the nearest node, so p should lie close to the
        segment."""
        q = np.asarray(tuple(p), dtype=float)
        rel = centered(self.nodes - q)
        i = int(np.argmin(np.hypot(rel[:, 0], rel[:, 1])))
        q_lift = self.nodes[i] - rel[i]
        best = (math.inf, float(self.params[i]))
        for j in (i - 1, i):
            if j < 0 or j >= self.params.size - 1:
                continue
            p0, p1 = self.nodes[j:j + 1], self.nodes[j + 1:j + 2]
            t0, t1 = self.tangents[j:j + 1], self.tangents[j + 1:j + 2]
            tau = np.array([0.5])
            for _ in range(30):
                pos, vel, acc = _hermite(p0, p1, t0, t1, tau)
                diff = pos[0] - q_lift
                g = diff @ vel[0]
                dg = vel[0] @ vel[0] + diff @ acc[0]
                step = g / dg
                tau = np.clip(tau - step, 0.0, 1.0)
                if abs(step) < 1e-17:
                    break
            pos, _, _ = _hermite(p0, p1, t0, t1, tau)
            dist = float(np.linalg.norm(pos[0] - q_lift))
            if dist < best[0]:
                t = self.params[j] + _piece_lengths(p0, p1, t0, t1, tau)[0]
                best = (dist, float(t))
        return best[1]

    def distance_to(self, p) -> float:
        t = self.project(p)
        return float(np.hypot(*centered(self.lift_point(t) - np.asarray(tuple(p), dtype=float))))

    def orbit_sums(self, stage_values: np.ndarray, first: int, depth: int,
                   tail_function=None) -> np.ndarray:
        """Per-node sums over k = first..depth of F(g^{-k} z) for the pushing
        map g and a function F, relative to the base of the construction.

        ``stage_values[j]`` is F at stage j, i.e. at g^{-(n-j)} of the final
        nodes.  For k beyond the stored stages, F is linearized along the
        leaf: the terms are dF/ds at deep backward images of the base point
        times the node's leaf offset there."""
        n = self.depth
        last = min(depth, n)
        rows = [n - k for k in range(first, last + 1)]
        total = stage_values[rows].sum(axis=0) if rows else np.zeros(self.nodes.shape[0])
        if depth > n and tail_function is not None:
            total = total + self._tail_coefficient(depth, tail_function) * self.base_offsets
        return total

    def _tail_coefficient(self, depth: int, tail_function) -> float:
        pull = self.push_map.inverse_ops
        w = self.base_point.copy()
        v = self.base_direction.copy()
        scale = 1.0
        coeff = 0.0
        for _ in range(self.depth + 1, depth + 1):
            x, y, a, b, c, d = K.apply_jac_ops(pull, w[0], w[1])
            vx, vy = a * v[0] + b * v[1], c * v[0] + d * v[1]
            r = math.hypot(vx, vy)
            v = np.array([vx / r, vy / r])
            w = np.array([x, y])
            scale *= r
            if scale < PRECISION_FLOOR:
                break
            probes = np.array([w + FD_STEP * v, w - FD_STEP * v])
            vals = tail_function(probes)
            coeff += scale * (vals[0] - vals[1]) / (2 * FD_STEP)
        return coeff

    def csv_rows(self, density=None):
        pts = wrap(self.nodes)
        dens = density.values if density is not None else np.ones(self.params.size)
        for t, p, w in zip(self.params, pts, dens):
            yield (repr(float(t)), repr(float(p[0])), repr(float(p[1])), repr(float(w)))

    def write_csv(self, path, density=None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("t", "x", "y", "omega"))
            writer.writerows(self.csv_rows(density))


UnstableSegment = LeafSegment


def _stage_count(push: AnosovMap, extent: float) -> int:
    grow = abs(push.lambda_u)
    return max(6, math.ceil(math.log(max(extent, 1e-3) * 1e6) / math.log(grow)))


def _build(owner: AnosovMap, kind: str, x0, length: float, direction: int,
           margin: float | None, max_step: float) -> LeafSegment:
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if not 0.0 <= length <= MAX_LENGTH:
        raise ValueError(f"length must be in [0, {MAX_LENGTH}]")
    push = owner if kind == "unstable" else inverse_map(owner)
    x0 = wrap(np.asarray(tuple(x0), dtype=float))
    margin = max(0.02 * length, 4 * max_step) if margin is None else margin
    lo_need, hi_need = -margin, length + margin
    n = _stage_count(push, hi_need - lo_need)
    base = K.iterate_points(push.inverse_ops, x0[None, :], n, True)[0]
    field_dir = push.unstable_direction(base)
    growth = math.exp(push.log_unstable_jacobian(base, n))
    target_dir = push.unstable_direction(x0)
    lo, hi = lo_need / growth, hi_need / growth
    count = max(9, math.ceil((hi_need - lo_need) / max_step * 1.3) + 1)
    for _ in range(40):
        offsets = np.linspace(lo, hi, count)
        anchor_idx = int(np.argmin(np.abs(offsets)))
        e = direction * field_dir
        pts = base[None, :] + offsets[:, None] * e[None, :]
        tans = K.directions(push.ops, push.inverse_ops, push.linear_unstable,
                            np.ascontiguousarray(wrap(pts)), 40)
        tans = tans * np.sign(tans @ e)[:, None]
        stages = np.empty((n + 1, count, 2))
        stage_t = np.empty((n + 1, count, 2))
        logs = np.empty((n, count))
        stages[0], stage_t[0] = pts, tans
        for j in range(n):
            pts, tans, lg = K.push_curve(push.ops, np.ascontiguousarray(pts), np.ascontiguousarray(tans),
                                         anchor_idx)
            stages[j + 1], stage_t[j + 1], logs[j] = pts, tans, lg
        if tans[anchor_idx] @ target_dir * direction < 0:
            # orientation reversed by a negative eigenvalue; flip the seed direction
            field_dir = -field_dir
            continue
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords == 0.0):
            raise StepCollapse("nodes coincide after pushing; segment too short to resolve")
        if chords.max() > max_step:
            count = math.ceil(count * chords.max() / max_step * 1.1)
            continue
        lengths = _piece_lengths(pts[:-1], pts[1:], tans[:-1], tans[1:])
        params = np.concatenate([[0.0], np.cumsum(lengths)])
        seg = LeafSegment(owner, kind, TorusPoint(*x0), float(length), direction, pts, tans, params,
                          stages, stage_t, logs, offsets.copy(), e.copy(), base.copy())
        t_anchor = seg.project(x0)
        params = params - t_anchor
        if params[0] > lo_need or params[-1] < hi_need:
            span = params[-1] - params[0]
            width = hi - lo
            if params[0] > lo_need:
                lo -= width * (params[0] - lo_need) / span * 1.2 + width * 0.01
            if params[-1] < hi_need:
                hi += width * (hi_need - params[-1]) / span * 1.2 + width * 0.01
            count = max(count, math.ceil((hi_need - lo_need) / max_step * 1.3) + 1)
            continue
        # keep only what is needed plus one node on either side
        keep = np.nonzero((params >= lo_need - max_step) & (params <= hi_need + max_step))[0]
        i0, i1 = max(keep[0] - 1, 0), min(keep[-1] + 1, params.size - 1) + 1
        return LeafSegment(owner, kind, TorusPoint(*x0), float(length), direction,
                           pts[i0:i1].copy(), tans[i0:i1].copy(), params[i0:i1].copy(),
                           stages[:, i0:i1].copy(), stage_t[:, i0:i1].copy(), logs[:, i0:i1].copy(),
                           offsets[i0:i1].copy(), e.copy(), base.copy())
    raise StepCollapse(f"could not resolve a leaf of length {length} with step {max_step}")


def trace_unstable(f: AnosovMap, x0, length: float, direction: int = 1,
                   margin: float | None = None, max_step: float = MAX_STEP) -> LeafSegment:
    """Piece of W^u_f(x0) of arclength ``length`` starting at x0 and running
    along +/- e^u(x0)."""
    return _build(f, "unstable", x0, length, direction, margin, max_step)


def trace_stable(f: AnosovMap, x0, length: float, direction: int = 1,
                 margin: float | None = None, max_step: float = MAX_STEP) -> LeafSegment:
    """Piece of W^s_f(x0), built as an unstable leaf of f^{-1}."""
    return _build(f, "stable", x0, length, direction, margin, max_step)


# -- conditional densities -----------------------------------------------------

@dataclass(frozen=True)
class DensityTable:
    """omega(gamma(t), gamma(base)) at the segment nodes, with
    omega(x, x0) = prod_{n>=1} D_u f(f^{-n} x0) / D_u f(f^{-n} x)."""

    segment: LeafSegment
    base: float
    depth: int
    log_sums: np.ndarray
    values: np.ndarray = field(repr=False)
    _spline: CubicSpline = field(repr=False)

    def log_at(self, t) -> np.ndarray:
        return self._spline(self.base) - self._spline(t)

    def at(self, t):
        out = np.exp(self.log_at(t))
        return float(out) if np.ndim(t) == 0 else out

    def between(self, t, s):
        """omega(gamma(t), gamma(s))."""
        out = np.exp(self._spline(s) - self._spline(t))
        return float(out) if np.ndim(t) == 0 and np.ndim(s) == 0 else out

    def rebase(self, base: float) -> "DensityTable":
        return _density_from_sums(self.segment, base, self.depth, self.log_sums)

    def log_bound_constant(self) -> float:
        """Smallest K with |log omega(x, base)| <= K d^u(x, base) on the nodes."""
        d = np.abs(self.segment.params - self.base)
        mask = d > 1e-9
        if not mask.any():
            return 0.0
        return float(np.max(np.abs(np.log(self.values[mask])) / d[mask]))


def _density_from_sums(segment: LeafSegment, base: float, depth: int, sums: np.ndarray) -> DensityTable:
    spline = CubicSpline(segment.params, sums)
    values = np.exp(spline(base) - sums)
    return DensityTable(segment, float(base), int(depth), sums, values, spline)


def conditional_density(segment: LeafSegment, base: float = 0.0, depth: int | None = None) -> DensityTable:
    """SRB conditional density along an unstable segment, normalized to 1 at
    parameter ``base``."""
    if segment.kind != "unstable":
        raise ValueError("conditional densities live on unstable segments")
    if depth is None:
        depth = truncation_depth(segment.owner, segment.t_max - segment.t_min)
    push = segment.push_map

    def log_du(points):
        return push.log_unstable_jacobian(np.ascontiguousarray(points), 1)

    stage_values = np.vstack([segment.stage_logs, np.zeros((1, segment.nodes.shape[0]))])
    sums = segment.orbit_sums(stage_values, 1, depth, log_du)
    return _density_from_sums(segment, base, depth, sums)


def leafwise_integral(segment: LeafSegment, density: DensityTable, a: float, b: float,
                      tol: float = 1e-12) -> float:
    """int_a^b omega dt along the unit-speed segment by adaptive Simpson."""
    if a > b:
        return -leafwise_integral(segment, density, b, a, tol)
    if a == b:
        return 0.0
    if a < segment.t_min - 1e-12 or b > segment.t_max + 1e-12:
        raise ValueError("integration bounds outside the segment")
    # start from a uniform partition at roughly the node spacing
    pieces = max(2, math.ceil((b - a) / 5e-2))
    edges = np.linspace(a, b, pieces + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += _adaptive_simpson(density.at, lo, hi, tol * (hi - lo) / (b - a))
    return total


def _adaptive_simpson(func, a, b, tol):
    fa, fb, fm = np.asarray(func(np.array([a, b, 0.5 * (a + b)])))
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, tol, level = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = func(np.array([lm, rm]))
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        err = left + right - whole
        if abs(err) <= 15 * tol or level > 40:
            total += left + right + err / 15
        else:
            stack.append((a, m, fa, flm, fm, left, tol / 2, level + 1))
            stack.append((m, b, fm, frm, fb, right, tol / 2, level + 1))
    return total


# -- stable holonomy -------------------------------------------------------------

def _eigen_coords(fmap: AnosovMap, pts: np.ndarray) -> np.ndarray:
    basis = np.column_stack([fmap.linear_unstable, fmap.linear_stable])
    return pts @ np.linalg.inv(basis).T


def _crossings(a_seg: LeafSegment, s_seg: LeafSegment):
    """All transversal crossings of s_seg with lattice translates of a_seg,
    as a list of (t on a_seg, r on s_seg, translate m) with a_seg(t) =
    s_seg(r) + m on the cover."""
    f = a_seg.owner
    ua = _eigen_coords(f, a_seg.nodes)
    us = _eigen_coords(f, s_seg.nodes)
    du = np.diff(ua[:, 0])
    if not (np.all(du > 0) or np.all(du < 0)):
        raise NoCrossing("target segment is not a graph over the unstable eigendirection")
    order = np.argsort(ua[:, 0])
    ua_sorted_u, ua_sorted_s = ua[order, 0], ua[order, 1]
    span = np.ptp(a_seg.nodes, axis=0).max() + np.ptp(s_seg.nodes, axis=0).max()
    M = int(math.ceil(span)) + 2
    grid = np.arange(-M, M + 1)
    mm = np.stack(np.meshgrid(grid, grid, indexing="ij"), -1).reshape(-1, 2).astype(float)
    shift = mm
    em = _eigen_coords(f, shift)
    u_lo, u_hi = ua[:, 0].min(), ua[:, 0].max()
    s_lo, s_hi = ua[:, 1].min(), ua[:, 1].max()
    ok = ((us[:, 0].max() + em[:, 0] >= u_lo) & (us[:, 0].min() + em[:, 0] <= u_hi)
          & (us[:, 1].max() + em[:, 1] >= s_lo) & (us[:, 1].min() + em[:, 1] <= s_hi))
    found = []
    for m, e in zip(shift[ok], em[ok]):
        u = us[:, 0] + e[0]
        valid = (u >= u_lo) & (u <= u_hi)
        if valid.sum() < 2:
            continue
        gap = us[:, 1] + e[1] - np.interp(u, ua_sorted_u, ua_sorted_s)
        for j in np.nonzero(valid[:-1] & valid[1:] & (np.sign(gap[:-1]) != np.sign(gap[1:])))[0]:
            w = gap[j] / (gap[j] - gap[j + 1])
            r0 = s_seg.params[j] + w * (s_seg.params[j + 1] - s_seg.params[j])
            u0 = u[j] + w * (u[j + 1] - u[j])
            t0 = float(np.interp(u0, ua_sorted_u, a_seg.params[order]))
            found.append((t0, float(r0), m))
    return found


def _refine_crossing(a_seg: LeafSegment, s_seg: LeafSegment, t, r, m, tol=1e-14):
    for _ in range(50):
        F = a_seg.lift_point(t) - s_seg.lift_point(r) - m
        J = np.column_stack([a_seg.tangent(t), -s_seg.tangent(r)])
        step = np.linalg.solve(J, -F)
        t = float(np.clip(t + step[0], a_seg.t_min, a_seg.t_max))
        r = float(np.clip(r + step[1], s_seg.t_min, s_seg.t_max))
        if np.abs(step).max() < tol:
            break
    F = a_seg.lift_point(t) - s_seg.lift_point(r) - m
    return t, r, float(np.hypot(*F))


@dataclass(frozen=True)
class HolonomyHit:
    point: np.ndarray
    param: float
    stable_distance: float
    residual: float


def stable_holonomy(f: AnosovMap, source, target: LeafSegment, budget: float = 5.0,
                    within: tuple | None = None) -> HolonomyHit:
    """Slide ``source`` along its stable leaf to the nearest crossing with the
    target unstable segment.

    The stable leaf is traced in both directions with a growing length until
    a crossing is found.  ``within`` restricts admissible target parameters."""
    src = wrap(np.asarray(tuple(source), dtype=float))
    lo, hi = within if within is not None else (target.t_min, target.t_max)
    t_here = target.project(src)
    if lo <= t_here <= hi and target.distance_to(src) < 1e-13:
        return HolonomyHit(target.point(t_here), t_here, 0.0, target.distance_to(src))
    length = min(0.05, budget)
    while True:
        best = None
        for direction in (1, -1):
            s_seg = trace_stable(f, src, length, direction, margin=0.0)
            for t0, r0, m in _crossings(target, s_seg):
                if r0 < 0 or r0 > length:
                    continue
                t, r, res = _refine_crossing(target, s_seg, t0, r0, m)
                if not (lo <= t <= hi) or r < -1e-12:
                    continue
                if best is None or r < best[2]:
                    best = (t, direction, r, res)
        if best is not None:
            t, direction, r, res = best
            return HolonomyHit(target.point(t), t, float(r * direction), res)
        if length >= budget:
            raise NoCrossing(f"no crossing within stable length {budget}")
        length = min(budget, 3 * length)


@dataclass(frozen=True)
class HolonomyMap:
    """Stable holonomy from parameters of ``source`` to parameters of ``target``."""

    source: LeafSegment
    target: LeafSegment
    budget: float = 5.0

    def __call__(self, t) -> float:
        return stable_holonomy(self.source.owner, self.source.point(t), self.target, self.budget).param


# -- holonomy derivatives -------------------------------------------------------

def _stable_connector(f: AnosovMap, x, y, reach: float | None = None) -> tuple[LeafSegment, float, float]:
    """A stable segment through x containing y (searched on both sides).

    ``reach`` is an estimate of the leafwise distance, needed when the leaf
    wraps around the torus between the two points."""
    x = wrap(np.asarray(tuple(x), dtype=float))
    y = wrap(np.asarray(tuple(y), dtype=float))
    gap = float(np.hypot(*centered(y - x)))
    length = max(1.5 * gap, 1e-3) if reach is None else 1.1 * reach + 1e-3
    best = None
    for direction in (1, -1):
        seg = trace_stable(f, x, length, direction)
        r = seg.project(y)
        d = seg.distance_to(y)
        if best is None or d < best[2]:
            best = (seg, r, d)
    seg, r, d = best
    if d > 1e-8:
        raise ValueError(f"points are not on a common stable leaf (residual {d:.2e})")
    return seg, 0.0, r


def stable_orbit_log_sums(seg: LeafSegment, depth: int) -> np.ndarray:
    """Per-node sums of log D_u f(f^k z) for k = 0..depth along a stable
    segment, with exactly aligned forward orbits."""
    f = seg.owner
    flat = np.ascontiguousarray(seg.stages.reshape(-1, 2))
    vals = f.log_unstable_jacobian(wrap(flat), 1).reshape(seg.stages.shape[:2])

    def log_du(points):
        return f.log_unstable_jacobian(np.ascontiguousarray(wrap(points)), 1)

    return seg.orbit_sums(vals, 0, depth, log_du)


def holonomy_derivative(f: AnosovMap, x, hol_x, depth: int | None = None,
                        reach: float | None = None) -> float:
    """prod_{n=0}^{depth} D_u f(f^n x) / D_u f(f^n hol_x) for x, hol_x on a
    common stable leaf."""
    seg, rx, ry = _stable_connector(f, x, hol_x, reach)
    if depth is None:
        depth = truncation_depth(f, abs(ry - rx) + 1e-3, contracting=True)
    sums = stable_orbit_log_sums(seg, depth)
    spline = CubicSpline(seg.params, sums)
    return float(math.exp(spline(rx) - spline(ry)))


def holonomy_jacobian_rn(f: AnosovMap, source: LeafSegment, target: LeafSegment, z,
                         source_density: DensityTable | None = None,
                         target_density: DensityTable | None = None,
                         depth: int | None = None) -> float:
    """Radon-Nikodym derivative of the pulled-back target conditional measure
    with respect to the source one at source parameter z:

        rn(z) = omega_t(hol z, hol x) * Dhol(z) / omega_s(z, x)

    where x and hol x are the two segment anchors (assumed on one stable
    leaf) and Dhol is the holonomy derivative product."""
    sd = source_density or conditional_density(source, 0.0, depth)
    td = target_density or conditional_density(target, 0.0, depth)
    hit = stable_holonomy(f, source.point(z), target)
    dhol = holonomy_derivative(f, source.point(z), hit.point, depth)
    return float(td.at(hit.param) * dhol / sd.at(z))
