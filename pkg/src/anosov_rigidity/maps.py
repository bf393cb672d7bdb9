"""Shear perturbations of hyperbolic toral automorphisms.

A map is ``post_shears o A o pre_shears`` where ``A`` is a hyperbolic matrix in
GL(2, Z) and each shear moves one coordinate by a trigonometric function of
the other.  Shears have unit Jacobian determinant, so every member of the
family preserves area and has an exact inverse.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .torus import LatticeMatrix, RealMatrix2, TorusPoint, wrap

DEFAULT_DEPTH = 40
CONE_OPENING = 0.5


class NotAnosov(ValueError):
    """The cone test failed: the map is not verified hyperbolic."""


@dataclass(frozen=True)
class Shear:
    """(x, y) -> (x + eps sin(2 pi k y) / (2 pi k), y) for the horizontal axis,
    and the transposed form for the vertical axis."""

    axis: str
    amplitude: float
    frequency: int = 1

    def __post_init__(self):
        if self.axis not in ("horizontal", "vertical"):
            raise ValueError(f"shear axis must be 'horizontal' or 'vertical', got {self.axis!r}")
        if int(self.frequency) != self.frequency or self.frequency < 1:
            raise ValueError(f"shear frequency must be a positive integer, got {self.frequency!r}")
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "frequency", int(self.frequency))

    def inverse(self) -> "Shear":
        return Shear(self.axis, -self.amplitude, self.frequency)

    def row(self) -> list[float]:
        kind = 1.0 if self.axis == "horizontal" else 2.0
        return [kind, self.amplitude, float(self.frequency), 0.0, 0.0]

    def to_dict(self) -> dict:
        return {"axis": self.axis, "amplitude": self.amplitude, "frequency": self.frequency}

    @classmethod
    def from_dict(cls, data: dict) -> "Shear":
        return cls(data["axis"], data["amplitude"], data.get("frequency", 1))


def _linear_row(m: LatticeMatrix) -> list[float]:
    return [0.0, float(m.a), float(m.b), float(m.c), float(m.d)]


def _as_points(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(tuple(p) if isinstance(p, TorusPoint) else p, dtype=float)
    single = arr.ndim == 1
    return np.ascontiguousarray(arr.reshape(-1, 2)), single


@dataclass(frozen=True)
class HyperbolicityRates:
    """Measured bands for n-step Jacobians: stable in [mu0, nu0], unstable in
    [mu1, nu1], with multiplicative constant C."""

    mu0: float
    nu0: float
    mu1: float
    nu1: float
    C: float

    def unstable_tail(self, n: int) -> float:
        """Geometric tail sum_{i > n} mu1^{-i}."""
        r = 1.0 / self.mu1
        return r ** (n + 1) / (1.0 - r)


@dataclass(frozen=True, eq=True)
class AnosovMap:
    linear_part: LatticeMatrix
    shears: tuple = ()
    pre_shears: tuple = ()
    check_cone: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.linear_part, LatticeMatrix):
            object.__setattr__(self, "linear_part", LatticeMatrix.from_rows(self.linear_part))
        object.__setattr__(self, "shears", tuple(self.shears))
        object.__setattr__(self, "pre_shears", tuple(self.pre_shears))
        if not self.linear_part.unimodular:
            raise ValueError(f"linear part must have det +-1, got {self.linear_part.det}")
        if not self.linear_part.hyperbolic:
            raise ValueError("linear part is not hyperbolic")
        rows = [s.row() for s in self.pre_shears] + [_linear_row(self.linear_part)]
        rows += [s.row() for s in self.shears]
        inv_rows = [s.inverse().row() for s in reversed(self.shears)]
        inv_rows += [_linear_row(self.linear_part.inverse())]
        inv_rows += [s.inverse().row() for s in reversed(self.pre_shears)]
        object.__setattr__(self, "_ops", np.ascontiguousarray(rows, dtype=float))
        object.__setattr__(self, "_inv_ops", np.ascontiguousarray(inv_rows, dtype=float))
        values, vectors = RealMatrix2.from_array(self.linear_part.array()).eigen()
        object.__setattr__(self, "_eig", (values, vectors))
        if self.check_cone:
            ok, growth = self.cone_check()
            if not ok:
                raise NotAnosov(f"cone condition fails (minimal growth {growth:.4f})")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def cat(cls, amplitude: float = 0.0, frequency: int = 1, axis: str = "horizontal") -> "AnosovMap":
        """The cat map [[2,1],[1,1]] followed by one shear (none if amplitude is 0)."""
        shears = (Shear(axis, amplitude, frequency),) if amplitude != 0.0 else ()
        return cls(LatticeMatrix(2, 1, 1, 1), shears)

    def inverse(self) -> "AnosovMap":
        return AnosovMap(
            self.linear_part.inverse(),
            tuple(s.inverse() for s in reversed(self.pre_shears)),
            tuple(s.inverse() for s in reversed(self.shears)),
            check_cone=False,
        )

    def conjugate(self, psi: tuple) -> "AnosovMap":
        """psi o f o psi^{-1} for a composition of shears ``psi`` (applied in order)."""
        psi = tuple(psi)
        psi_inv = tuple(s.inverse() for s in reversed(psi))
        return AnosovMap(self.linear_part, self.shears + psi, psi_inv + self.pre_shears)

    @property
    def ops(self) -> np.ndarray:
        return self._ops

    @property
    def inverse_ops(self) -> np.ndarray:
        return self._inv_ops

    @property
    def is_linear(self) -> bool:
        return all(s.amplitude == 0.0 for s in self.shears + self.pre_shears)

    # -- linear model -------------------------------------------------------
    @property
    def lambda_u(self) -> float:
        return float(self._eig[0][0])

    @property
    def lambda_s(self) -> float:
        return float(self._eig[0][1])

    @property
    def linear_unstable(self) -> np.ndarray:
        return self._eig[1][:, 0].copy()

    @property
    def linear_stable(self) -> np.ndarray:
        return self._eig[1][:, 1].copy()

    # -- pointwise evaluation -----------------------------------------------
    def apply(self, p):
        pts, single = _as_points(p)
        out = K.map_points(self._ops, pts, True)
        return out[0] if single else out

    def apply_inverse(self, p):
        pts, single = _as_points(p)
        out = K.map_points(self._inv_ops, pts, True)
        return out[0] if single else out

    def apply_lift(self, p):
        pts, single = _as_points(p)
        out = K.map_points(self._ops, pts, False)
        return out[0] if single else out

    def iterate(self, p, n: int):
        pts, single = _as_points(p)
        ops = self._ops if n >= 0 else self._inv_ops
        out = K.iterate_points(ops, pts, abs(int(n)), True)
        return out[0] if single else out

    def derivative(self, p):
        """Df(p) as a RealMatrix2 for one point or an (N, 2, 2) array."""
        pts, single = _as_points(p)
        jac = K.jac_points(self._ops, pts)
        return RealMatrix2.from_array(jac[0]) if single else jac

    def derivative_array(self, p) -> np.ndarray:
        pts, single = _as_points(p)
        jac = K.jac_points(self._ops, pts)
        return jac[0] if single else jac

    def perturbation(self, p) -> np.ndarray:
        """f - A evaluated on the cover; a Z^2-periodic function."""
        pts, single = _as_points(p)
        out = K.map_points(self._ops, pts, False) - pts @ self.linear_part.array().T
        return out[0] if single else out

    # -- splitting ----------------------------------------------------------
    def unstable_direction(self, p, depth: int = DEFAULT_DEPTH):
        """normalize(Df^K(f^{-K} p) v0) with v0 the linear unstable eigenvector."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        pts, single = _as_points(p)
        out = K.directions(self._ops, self._inv_ops, self.linear_unstable, pts, int(depth))
        return out[0] if single else out

    def stable_direction(self, p, depth: int = DEFAULT_DEPTH):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        pts, single = _as_points(p)
        out = K.directions(self._inv_ops, self._ops, self.linear_stable, pts, int(depth))
        return out[0] if single else out

    def log_unstable_jacobian(self, p, n: int = 1, depth: int = DEFAULT_DEPTH):
        pts, single = _as_points(p)
        if n < 1:
            raise ValueError("n must be >= 1")
        out = K.log_jacobian_along_orbit(self._ops, self._inv_ops, self.linear_unstable,
                                         pts, int(n), int(depth))
        return float(out[0]) if single else out

    def log_stable_jacobian(self, p, n: int = 1, depth: int = DEFAULT_DEPTH):
        """log D_s f^n(p), computed as -log of the expansion of f^{-n} along
        the stable direction starting from f^n(p)."""
        pts, single = _as_points(p)
        if n < 1:
            raise ValueError("n must be >= 1")
        ends = K.iterate_points(self._ops, pts, int(n), True)
        out = -K.log_jacobian_along_orbit(self._inv_ops, self._ops, self.linear_stable,
                                          ends, int(n), int(depth))
        return float(out[0]) if single else out

    def unstable_jacobian(self, p, n: int = 1, depth: int = DEFAULT_DEPTH):
        return np.exp(self.log_unstable_jacobian(p, n, depth))

    def stable_jacobian(self, p, n: int = 1, depth: int = DEFAULT_DEPTH):
        return np.exp(self.log_stable_jacobian(p, n, depth))

    # -- hyperbolicity checks -----------------------------------------------
    def cone_check(self, grid: int = 64, opening: float = CONE_OPENING) -> tuple[bool, float]:
        """Check that Df maps the unstable cone of the linear model strictly
        into itself and expands it, on a grid x grid sample.

        Returns (passes, minimal expansion factor of cone vectors)."""
        g = (np.arange(grid) + 0.5) / grid
        pts = np.ascontiguousarray(np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2))
        jac = K.jac_points(self._ops, pts)
        vu, vs = self.linear_unstable, self.linear_stable
        basis_inv = np.linalg.inv(np.column_stack([vu, vs]))
        worst_ratio = 0.0
        min_growth = np.inf
        for b in np.linspace(-opening, opening, 9):
            v = vu + b * vs
            img = jac @ v
            coords = img @ basis_inv.T
            worst_ratio = max(worst_ratio, float(np.max(np.abs(coords[:, 1] / coords[:, 0]))))
            min_growth = min(min_growth, float(np.min(np.linalg.norm(img, axis=1) / np.linalg.norm(v))))
        return bool(worst_ratio < opening and min_growth > 1.0), min_growth

    def measure_rates(self, samples: int = 10_000, steps: int = 20, seed: int = 0,
                      depth: int = DEFAULT_DEPTH) -> HyperbolicityRates:
        """Empirical rates: per-step extremes of log jacobians give the bands,
        and C absorbs the spread of the k-step Jacobians around them."""
        rng = np.random.default_rng(seed)
        pts = rng.random((samples, 2))
        lu1 = self.log_unstable_jacobian(pts, 1, depth)
        ls1 = self.log_stable_jacobian(pts, 1, depth)
        mu1, nu1 = float(np.exp(lu1.min())), float(np.exp(lu1.max()))
        mu0, nu0 = float(np.exp(ls1.min())), float(np.exp(ls1.max()))
        logC = 0.0
        for k in (1, 2, 5, 10, steps):
            lu = self.log_unstable_jacobian(pts[:1000], k, depth)
            ls = self.log_stable_jacobian(pts[:1000], k, depth)
            logC = max(logC,
                       float(np.max(k * math.log(mu1) - lu)), float(np.max(lu - k * math.log(nu1))),
                       float(np.max(k * math.log(mu0) - ls)), float(np.max(ls - k * math.log(nu0))))
        return HyperbolicityRates(mu0, nu0, mu1, nu1, float(math.exp(logC)))

    # -- serialization ------------------------------------------------------
    def to_config(self) -> dict:
        return {
            "linear_part": self.linear_part.rows(),
            "shears": [s.to_dict() for s in self.shears],
            "pre_shears": [s.to_dict() for s in self.pre_shears],
        }

    @classmethod
    def from_config(cls, data: dict) -> "AnosovMap":
        if "linear_part" not in data:
            raise KeyError("linear_part")
        return cls(
            LatticeMatrix.from_rows(data["linear_part"]),
            tuple(Shear.from_dict(s) for s in data.get("shears", [])),
            tuple(Shear.from_dict(s) for s in data.get("pre_shears", [])),
        )


class SplittingField:
    """Cached evaluator of the unstable and stable direction fields.

    Keys are the wrapped coordinates themselves, so a cache hit returns the
    value computed at exactly the same point.  Concurrent inserts of the same
    key store identical values; the lock only protects the dict."""

    def __init__(self, fmap: AnosovMap, depth: int = DEFAULT_DEPTH):
        self.map = fmap
        self.depth = depth
        self._cache: dict[tuple[float, float], tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def __call__(self, p) -> tuple[np.ndarray, np.ndarray]:
        key = (wrap(float(p[0])), wrap(float(p[1])))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = (self.map.unstable_direction(key, self.depth), self.map.stable_direction(key, self.depth))
        with self._lock:
            self._cache.setdefault(key, value)
        return value

    def __len__(self) -> int:
        return len(self._cache)


def angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unsigned angle in [0, pi/2] between lines spanned by rows of u and v."""
    cross = np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    dot = np.abs(np.sum(u * v, axis=-1))
    return np.arctan2(cross, dot)
