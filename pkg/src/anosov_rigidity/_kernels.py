"""Compiled inner loops for maps given as operation tables.

An operation table is an (m, 5) float array.  Row layout is
``[kind, p1, p2, p3, p4]`` with

* kind 0: integer linear map with entries (p1, p2, p3, p4) = (a, b, c, d)
* kind 1: horizontal shear, x += p1 * sin(2 pi p2 y) / (2 pi p2)
* kind 2: vertical shear,   y += p1 * sin(2 pi p2 x) / (2 pi p2)

Rows are applied top to bottom.  All routines work on the universal cover;
wrapping to the unit square is left to the caller unless stated otherwise.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def apply_ops(ops, x, y):
    for i in range(ops.shape[0]):
        kind = ops[i, 0]
        if kind == 0.0:
            nx = ops[i, 1] * x + ops[i, 2] * y
            ny = ops[i, 3] * x + ops[i, 4] * y
            x = nx
            y = ny
        elif kind == 1.0:
            w = TWO_PI * ops[i, 2]
            x = x + ops[i, 1] * math.sin(w * y) / w
        else:
            w = TWO_PI * ops[i, 2]
            y = y + ops[i, 1] * math.sin(w * x) / w
    return x, y


@njit(cache=True, nogil=True)
def apply_jac_ops(ops, x, y):
    """Image point and Jacobian entries (j00, j01, j10, j11)."""
    j00 = 1.0
    j01 = 0.0
    j10 = 0.0
    j11 = 1.0
    for i in range(ops.shape[0]):
        kind = ops[i, 0]
        if kind == 0.0:
            a = ops[i, 1]
            b = ops[i, 2]
            c = ops[i, 3]
            d = ops[i, 4]
            nx = a * x + b * y
            ny = c * x + d * y
            x = nx
            y = ny
            n00 = a * j00 + b * j10
            n01 = a * j01 + b * j11
            n10 = c * j00 + d * j10
            n11 = c * j01 + d * j11
        elif kind == 1.0:
            w = TWO_PI * ops[i, 2]
            s = ops[i, 1] * math.cos(w * y)
            x = x + ops[i, 1] * math.sin(w * y) / w
            n00 = j00 + s * j10
            n01 = j01 + s * j11
            n10 = j10
            n11 = j11
        else:
            w = TWO_PI * ops[i, 2]
            s = ops[i, 1] * math.cos(w * x)
            y = y + ops[i, 1] * math.sin(w * x) / w
            n00 = j00
            n01 = j01
            n10 = j10 + s * j00
            n11 = j11 + s * j01
        j00 = n00
        j01 = n01
        j10 = n10
        j11 = n11
    return x, y, j00, j01, j10, j11


@njit(cache=True, nogil=True)
def wrap1(v):
    w = v - math.floor(v)
    if w >= 1.0:
        w = 0.0
    return w + 0.0


@njit(cache=True, nogil=True)
def map_points(ops, pts, wrap):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        x, y = apply_ops(ops, pts[i, 0], pts[i, 1])
        if wrap:
            x = wrap1(x)
            y = wrap1(y)
        out[i, 0] = x
        out[i, 1] = y
    return out


@njit(cache=True, nogil=True)
def jac_points(ops, pts):
    out = np.empty((pts.shape[0], 2, 2))
    for i in range(pts.shape[0]):
        _, _, a, b, c, d = apply_jac_ops(ops, pts[i, 0], pts[i, 1])
        out[i, 0, 0] = a
        out[i, 0, 1] = b
        out[i, 1, 0] = c
        out[i, 1, 1] = d
    return out


@njit(cache=True, nogil=True)
def iterate_points(ops, pts, n, wrap):
    out = pts.copy()
    for i in range(pts.shape[0]):
        x = pts[i, 0]
        y = pts[i, 1]
        for _ in range(n):
            x, y = apply_ops(ops, x, y)
            if wrap:
                x = wrap1(x)
                y = wrap1(y)
        out[i, 0] = x
        out[i, 1] = y
    return out


@njit(cache=True, nogil=True)
def direction_at(ops_push, ops_pull, v0x, v0y, x, y, depth):
    """Unit vector obtained by pushing (v0x, v0y) forward under ``ops_push``
    along the backward orbit of (x, y) of length ``depth`` (computed with
    ``ops_pull``).  The result is oriented to have positive inner product
    with v0."""
    xs = np.empty(depth)
    ys = np.empty(depth)
    px = x
    py = y
    for k in range(depth):
        px, py = apply_ops(ops_pull, px, py)
        px = wrap1(px)
        py = wrap1(py)
        xs[k] = px
        ys[k] = py
    vx = v0x
    vy = v0y
    for k in range(depth - 1, -1, -1):
        _, _, a, b, c, d = apply_jac_ops(ops_push, xs[k], ys[k])
        nx = a * vx + b * vy
        ny = c * vx + d * vy
        nrm = math.hypot(nx, ny)
        vx = nx / nrm
        vy = ny / nrm
    if vx * v0x + vy * v0y < 0.0:
        vx = -vx
        vy = -vy
    return vx, vy


@njit(cache=True, nogil=True)
def directions(ops_push, ops_pull, v0, pts, depth):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        vx, vy = direction_at(ops_push, ops_pull, v0[0], v0[1],
                              pts[i, 0], pts[i, 1], depth)
        out[i, 0] = vx
        out[i, 1] = vy
    return out


@njit(cache=True, nogil=True)
def log_jacobian_along_orbit(ops_push, ops_pull, v0, pts, n, depth):
    """log of prod_{k<n} |D(ops_push) e(f^k p)| with e the pushed direction.

    The direction at the start is computed with ``direction_at`` and then
    carried along the orbit, so the factors multiply exactly."""
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        x = pts[i, 0]
        y = pts[i, 1]
        vx, vy = direction_at(ops_push, ops_pull, v0[0], v0[1], x, y, depth)
        total = 0.0
        for _ in range(n):
            x, y, a, b, c, d = apply_jac_ops(ops_push, x, y)
            x = wrap1(x)
            y = wrap1(y)
            nx = a * vx + b * vy
            ny = c * vx + d * vy
            nrm = math.hypot(nx, ny)
            total += math.log(nrm)
            vx = nx / nrm
            vy = ny / nrm
        out[i] = total
    return out


@njit(cache=True, nogil=True)
def push_curve(ops, pts, tans, anchor_index):
    """One forward step of a curve on the cover.

    Points are mapped on the cover and then every node is shifted by the
    same integer vector, chosen so that the anchor node lands in [0,1)^2.
    Tangents are pushed by the Jacobian and normalized; the log of the
    stretch factor of each tangent is returned as well."""
    n = pts.shape[0]
    out = np.empty_like(pts)
    tout = np.empty_like(tans)
    logs = np.empty(n)
    for i in range(n):
        x, y, a, b, c, d = apply_jac_ops(ops, pts[i, 0], pts[i, 1])
        out[i, 0] = x
        out[i, 1] = y
        vx = a * tans[i, 0] + b * tans[i, 1]
        vy = c * tans[i, 0] + d * tans[i, 1]
        nrm = math.hypot(vx, vy)
        tout[i, 0] = vx / nrm
        tout[i, 1] = vy / nrm
        logs[i] = math.log(nrm)
    sx = math.floor(out[anchor_index, 0])
    sy = math.floor(out[anchor_index, 1])
    for i in range(n):
        out[i, 0] -= sx
        out[i, 1] -= sy
    return out, tout, logs


@njit(cache=True, nogil=True)
def conjugacy_displacement(ops, inv_ops, lin, binv, bmat, lam_u, lam_s, n_u, n_s, pts):
    """Series for u = H - id with H o f = A o H.

    u_u(p) = sum_{k>=0} lam_u^{-(k+1)} P_u(f^k p)
    u_s(p) = -sum_{k>=1} lam_s^{k-1} P_s(f^{-k} p)
    where P = f - A on the cover, split in the eigenbasis (binv maps
    Cartesian components to eigen components, bmat maps back)."""
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        x0 = pts[i, 0]
        y0 = pts[i, 1]
        su = 0.0
        x = x0
        y = y0
        w = 1.0 / lam_u
        for _ in range(n_u):
            fx, fy = apply_ops(ops, x, y)
            px = fx - (lin[0] * x + lin[1] * y)
            py = fy - (lin[2] * x + lin[3] * y)
            su += w * (binv[0] * px + binv[1] * py)
            w /= lam_u
            x = wrap1(fx)
            y = wrap1(fy)
        ss = 0.0
        x = x0
        y = y0
        w = 1.0
        for _ in range(n_s):
            bx, by = apply_ops(inv_ops, x, y)
            bx = wrap1(bx)
            by = wrap1(by)
            fx, fy = apply_ops(ops, bx, by)
            px = fx - (lin[0] * bx + lin[1] * by)
            py = fy - (lin[2] * bx + lin[3] * by)
            ss -= w * (binv[2] * px + binv[3] * py)
            w *= lam_s
            x = bx
            y = by
        out[i, 0] = bmat[0] * su + bmat[1] * ss
        out[i, 1] = bmat[2] * su + bmat[3] * ss
    return out
