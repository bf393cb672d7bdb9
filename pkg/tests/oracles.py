"""Reference computations that share no code with the package."""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import product


def mat_pow(m, n):
    out = ((1, 0), (0, 1))
    for _ in range(n):
        out = ((out[0][0] * m[0][0] + out[0][1] * m[1][0], out[0][0] * m[0][1] + out[0][1] * m[1][1]),
               (out[1][0] * m[0][0] + out[1][1] * m[1][0], out[1][0] * m[0][1] + out[1][1] * m[1][1]))
    return out


def _minus_identity(m):
    return ((m[0][0] - 1, m[0][1]), (m[1][0], m[1][1] - 1))


def _box(M):
    corners = [(M[0][0] * a + M[0][1] * b, M[1][0] * a + M[1][1] * b) for a, b in product((0, 1), repeat=2)]
    xs = [c[0] for c in corners]
    ys = [c[1] for c in corners]
    return min(xs), max(xs), min(ys), max(ys)


def fixed_points_exact(m, n):
    """Points x in [0,1)^2 with (A^n - I) x in Z^2 as exact rationals, found by
    testing every integer vector in the bounding box of (A^n - I)[0,1]^2."""
    M = _minus_identity(mat_pow(m, n))
    d = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    x0, x1, y0, y1 = _box(M)
    out = []
    for u in range(x0, x1 + 1):
        for v in range(y0, y1 + 1):
            a = Fraction(M[1][1] * u - M[0][1] * v, d)
            b = Fraction(-M[1][0] * u + M[0][0] * v, d)
            if 0 <= a < 1 and 0 <= b < 1:
                out.append((a, b))
    return out


def fixed_point_count_bruteforce(m, n):
    return len(fixed_points_exact(m, n))


def _count_between(lo_num, hi_num, coef, lo_strict, hi_strict):
    """Range [lo, hi] of integers v with lo_num <= coef*v <= hi_num, each side
    strict when flagged."""
    if coef == 0:
        ok = (lo_num < 0 if lo_strict else lo_num <= 0) and (0 < hi_num if hi_strict else 0 <= hi_num)
        return (-(10 ** 30), 10 ** 30) if ok else (1, 0)
    if coef < 0:
        lo_num, hi_num, coef = -hi_num, -lo_num, -coef
        lo_strict, hi_strict = hi_strict, lo_strict
    lo = lo_num // coef + 1 if lo_strict else -((-lo_num) // coef)
    hi = -((-hi_num) // coef) - 1 if hi_strict else hi_num // coef
    return lo, hi


def fixed_point_count_rows(m, n):
    """The same count as ``fixed_point_count_bruteforce``, scanning rows of the
    bounding box and counting the admissible second coordinates exactly."""
    M = _minus_identity(mat_pow(m, n))
    d = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    s = 1 if d > 0 else -1
    D = abs(d)
    x0, x1, _, _ = _box(M)
    total = 0
    for u in range(x0, x1 + 1):
        # 0 <= s*(M11 u - M01 v) < D and 0 <= s*(-M10 u + M00 v) < D
        lo1, hi1 = _count_between(s * M[1][1] * u - D, s * M[1][1] * u, s * M[0][1], True, False)
        lo2, hi2 = _count_between(s * M[1][0] * u, s * M[1][0] * u + D, s * M[0][0], False, True)
        lo, hi = max(lo1, lo2), min(hi1, hi2)
        total += max(0, hi - lo + 1)
    return total


def quadratic_eigenvalues(m):
    """Eigenvalues of a real 2x2 matrix with real spectrum, largest first."""
    tr = m[0][0] + m[1][1]
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    disc = math.sqrt(tr * tr - 4 * det)
    return (tr + disc) / 2, (tr - disc) / 2


def cat_eigen():
    """Eigenvalues and unit eigenvectors of [[2,1],[1,1]] in closed form."""
    phi = (1 + math.sqrt(5)) / 2
    lam = phi * phi
    eu = (phi / math.sqrt(1 + phi * phi), 1 / math.sqrt(1 + phi * phi))
    es = (-1 / math.sqrt(1 + phi * phi), phi / math.sqrt(1 + phi * phi))
    return lam, 1 / lam, eu, es


def linear_holonomy_param(x0, p, *, reach=3):
    """For the cat map: the parameter a in [0, 1] with x0 + a eu = p + m + b es
    for some lattice vector m, choosing the smallest |b|."""
    _, _, eu, es = cat_eigen()
    det = eu[0] * es[1] - eu[1] * es[0]
    best = None
    for mx in range(-reach, reach + 1):
        for my in range(-reach, reach + 1):
            rx, ry = p[0] + mx - x0[0], p[1] + my - x0[1]
            a = (rx * es[1] - ry * es[0]) / det
            b = (eu[0] * ry - eu[1] * rx) / det
            if -1e-12 <= a <= 1 + 1e-12 and (best is None or abs(b) < abs(best[1])):
                best = (a, b)
    return best


def weighted_transfer_matrix(A, psi):
    """M[i][j] = A[i][j] exp(psi(i, j)) for a potential on 2-words."""
    return [[A[i][j] * math.exp(psi.get((i, j), 0.0)) if A[i][j] else 0.0
             for j in range(len(A))] for i in range(len(A))]


def pressure_by_periodic_sums(A, psi, n):
    """(1/n) log sum over admissible periodic words of length n of
    exp(sum of psi over cyclic 2-windows), by direct enumeration."""
    k = len(A)
    total = 0.0
    for w in product(range(k), repeat=n):
        if all(A[w[i]][w[(i + 1) % n]] for i in range(n)):
            total += math.exp(sum(psi.get((w[i], w[(i + 1) % n]), 0.0) for i in range(n)))
    return math.log(total) / n


def apply_shear(axis, eps, k, pts):
    """(x, y) -> (x + eps sin(2 pi k y) / (2 pi k), y) for 'horizontal', the
    transpose for 'vertical'; returns wrapped points."""
    import numpy as np

    out = np.array(pts, dtype=float)
    c = 2 * math.pi * k
    if axis == "horizontal":
        out[:, 0] += eps * np.sin(c * out[:, 1]) / c
    else:
        out[:, 1] += eps * np.sin(c * out[:, 0]) / c
    return out % 1.0


def apply_composition(A, pre, post, pts):
    """post shears o A o pre shears, each shear given as (axis, eps, k)."""
    import numpy as np

    out = np.array(pts, dtype=float)
    for s in pre:
        out = apply_shear(*s, out)
    out = (out @ np.array(A, dtype=float).T) % 1.0
    for s in post:
        out = apply_shear(*s, out)
    return out


def fixed_points_cosets(m, n):
    """Same set as fixed_points_exact, one point per coset of Z^2 / (A^n - I) Z^2.

    Column operations bring the lattice basis to the form (g, s), (0, t); the
    cosets are then represented by (i, j) with 0 <= i < g, 0 <= j < |t|."""
    M = _minus_identity(mat_pow(m, n))
    c1, c2 = [M[0][0], M[1][0]], [M[0][1], M[1][1]]
    while c2[0] != 0:
        q = c1[0] // c2[0]
        c1 = [c1[0] - q * c2[0], c1[1] - q * c2[1]]
        c1, c2 = c2, c1
    g, t = abs(c1[0]), abs(c2[1])
    d = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    out = []
    for i in range(g):
        for j in range(t):
            a = Fraction(M[1][1] * i - M[0][1] * j, d)
            b = Fraction(-M[1][0] * i + M[0][0] * j, d)
            out.append((a - (a.numerator // a.denominator), b - (b.numerator // b.denominator)))
    return out
