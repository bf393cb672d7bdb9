"""Points, lifts and small matrices on the flat torus R^2 / Z^2."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SingularMatrix(ValueError):
    """Raised when an operation needs a nonsingular lattice matrix."""


def wrap(values):
    """Reduce coordinates into [0, 1).

    Works on floats and arrays.  Values that round up to exactly 1.0 are sent
    to 0.0 and negative zeros are replaced by +0.0 so that equal torus points
    hash equally.
    """
    arr = np.asarray(values, dtype=float)
    out = arr - np.floor(arr)
    out = np.where(out >= 1.0, 0.0, out) + 0.0
    if np.ndim(values) == 0:
        return float(out)
    return out


def centered(values):
    """Representative of a displacement mod 1 in [-1/2, 1/2)."""
    arr = np.asarray(values, dtype=float)
    return arr - np.floor(arr + 0.5)


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", wrap(self.x))
        object.__setattr__(self, "y", wrap(self.y))

    @classmethod
    def from_lift(cls, lift) -> "TorusPoint":
        return cls(float(lift[0]), float(lift[1]))

    def lift(self, translate=(0, 0)) -> np.ndarray:
        return np.array([self.x + translate[0], self.y + translate[1]])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def __iter__(self):
        yield self.x
        yield self.y


def torus_distance(p, q) -> float:
    """Flat distance: minimum Euclidean distance over integer translates."""
    d = centered(np.asarray(tuple(p), dtype=float) - np.asarray(tuple(q), dtype=float))
    return float(math.hypot(d[0], d[1]))


def torus_distances(p, q) -> np.ndarray:
    """Vectorized flat distance between arrays of points of shape (..., 2)."""
    d = centered(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True)
class LatticeMatrix:
    """An integer 2x2 matrix [[a, b], [c, d]]."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValueError(f"lattice matrix entry {name}={value!r} is not an integer")
            object.__setattr__(self, name, int(value))

    @classmethod
    def from_rows(cls, rows) -> "LatticeMatrix":
        (a, b), (c, d) = rows
        return cls(a, b, c, d)

    @property
    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> int:
        return self.a + self.d

    @property
    def unimodular(self) -> bool:
        return self.det in (-1, 1)

    @property
    def hyperbolic(self) -> bool:
        if self.det == 1:
            return abs(self.trace) > 2
        if self.det == -1:
            return self.trace != 0
        return False

    def array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    def rows(self) -> list[list[int]]:
        return [[self.a, self.b], [self.c, self.d]]

    def __matmul__(self, other: "LatticeMatrix") -> "LatticeMatrix":
        return LatticeMatrix(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def power(self, n: int) -> "LatticeMatrix":
        if n < 0:
            return self.inverse().power(-n)
        result = LatticeMatrix(1, 0, 0, 1)
        base = self
        while n:
            if n & 1:
                result = result @ base
            base = base @ base
            n >>= 1
        return result

    def minus_identity(self) -> "LatticeMatrix":
        return LatticeMatrix(self.a - 1, self.b, self.c, self.d - 1)

    def inverse(self) -> "LatticeMatrix":
        if not self.unimodular:
            raise SingularMatrix(f"matrix with det {self.det} has no integer inverse")
        s = self.det
        return LatticeMatrix(s * self.d, -s * self.b, -s * self.c, s * self.a)


@dataclass(frozen=True)
class RealMatrix2:
    """A real 2x2 matrix with an eigen-decomposition helper."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_array(cls, m) -> "RealMatrix2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    def array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> float:
        return self.a + self.d

    def eigen(self):
        """Real eigenvalues sorted by decreasing modulus with unit eigenvectors
        as columns.  Raises ValueError for complex spectra."""
        tr, det = self.trace, self.det
        disc = tr * tr - 4.0 * det
        if disc < 0:
            raise ValueError("complex eigenvalues")
        root = math.sqrt(disc)
        big = (tr + math.copysign(root, tr)) / 2.0 if tr != 0 else root / 2.0
        small = det / big if big != 0 else (tr - big)
        values = np.array([big, small])
        vectors = np.empty((2, 2))
        for i, lam in enumerate(values):
            # pick the better conditioned of the two null vectors of M - lam I
            v1 = np.array([self.b, lam - self.a])
            v2 = np.array([lam - self.d, self.c])
            v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
            if np.linalg.norm(v) == 0.0:
                v = np.array([1.0, 0.0]) if i == 0 else np.array([0.0, 1.0])
            v = v / np.linalg.norm(v)
            if v[0] < 0 or (v[0] == 0 and v[1] < 0):
                v = -v
            vectors[:, i] = v
        return values, vectors


def lattice_kernel_points(matrix: LatticeMatrix) -> np.ndarray:
    """All torus points v with M v in Z^2, sorted lexicographically.

    The solutions form the finite group M^{-1} Z^2 / Z^2 of order |det M|.
    Every element has coordinates in (1/D) Z with D = |det M|, so the group is
    generated in exact integer arithmetic by the two columns of adj(M).
    Returns an array of shape (|det M|, 2).
    """
    det = matrix.det
    if det == 0:
        raise SingularMatrix("lattice_kernel_points needs det(M) != 0")
    D = abs(det)
    sign = 1 if det > 0 else -1
    # M^{-1} = adj(M) / det; columns of adj scaled by sign give numerators over D
    g1 = ((sign * matrix.d) % D, (-sign * matrix.c) % D)
    g2 = ((-sign * matrix.b) % D, (sign * matrix.a) % D)

    members: set[tuple[int, int]] = set()
    base: list[tuple[int, int]] = []
    cur = (0, 0)
    while cur not in members:
        members.add(cur)
        base.append(cur)
        cur = ((cur[0] + g1[0]) % D, (cur[1] + g1[1]) % D)
    offset = (0, 0)
    elements = list(base)
    while True:
        offset = ((offset[0] + g2[0]) % D, (offset[1] + g2[1]) % D)
        if offset in members:
            break
        coset = [((i + offset[0]) % D, (j + offset[1]) % D) for i, j in base]
        members.update(coset)
        elements.extend(coset)
    if len(elements) != D:
        raise RuntimeError("kernel enumeration did not produce |det| points")
    num = np.array(sorted(elements), dtype=np.int64)
    return num.astype(float) / D
