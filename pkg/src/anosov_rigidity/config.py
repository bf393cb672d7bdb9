"""Flat typed key-value experiment configuration.

One field per line, ``key : type [unit] = value``. Lists are comma
separated; ``#`` starts a comment line. Floats are written with ``repr``,
which round-trips bit-exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field

from .maps import AnosovMap, Shear
from .torus import LatticeMatrix

_LINE = re.compile(r"^(?P<key>[a-z0-9_.]+)\s*:\s*(?P<type>int|float|str|bool)(?P<list>\[\])?\s*"
                   r"\[(?P<unit>[^\]]*)\]\s*=\s*(?P<value>.*)$")
REQUIRED = ("map.matrix",)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message

    def to_dict(self) -> dict:
        return {"error": "config", "field": self.field, "message": self.message}


def _spec(kind, unit, default, doc, many=False):
    meta = {"kind": kind, "unit": unit, "doc": doc, "many": many}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class ExperimentConfig:
    map_matrix: list = _spec(int, "1", [2, 1, 1, 1], "linear part, row-major", True)
    map_eps: list = _spec(float, "1", [0.0, 0.05], "shear amplitudes of the map family", True)
    map_frequency: int = _spec(int, "1", 1, "shear frequency")
    map_axis: str = _spec(str, "-", "horizontal", "shear axis")
    psi_axes: list = _spec(str, "-", ["horizontal", "vertical"], "conjugator shear axes", True)
    psi_amplitudes: list = _spec(float, "1", [0.03, 0.03], "conjugator shear amplitudes", True)
    psi_frequencies: list = _spec(int, "1", [1, 1], "conjugator shear frequencies", True)
    periodic_max_period: int = _spec(int, "iterations", 8, "largest period enumerated")
    periodic_matching_tol: float = _spec(float, "1", 1e-7, "periodic-data matching tolerance")
    equidist_eps: float = _spec(float, "1", 0.05, "map amplitude for the equidistribution run")
    equidist_periods: list = _spec(int, "iterations", [4, 5, 6, 7, 8, 9, 10], "periods fitted", True)
    equidist_grid: int = _spec(int, "cells", 1024, "midpoint mesh for reference integrals")
    sft_matrix: list = _spec(int, "1", [1, 1, 1, 0], "transition matrix, row-major", True)
    sft_potential: list = _spec(float, "1", [0.0, 0.3, -0.2], "potential on 2-cylinders, lexicographic", True)
    sft_observable: list = _spec(float, "1", [1.0, -1.0, 0.5], "observable on 2-cylinders, lexicographic", True)
    sft_periods: list = _spec(int, "iterations", [6, 8, 10, 12, 14, 16, 18], "periods fitted", True)
    hn_eps: float = _spec(float, "1", 0.05, "map amplitude for the construction")
    hn_build_n: int = _spec(int, "iterations", 8, "N-context of build-hn")
    hn_contexts: list = _spec(int, "iterations", [2, 4, 6, 8], "N-contexts compared", True)
    hn_grid: int = _spec(int, "cells", 20, "C0 sample grid side")
    hn_c1_grid: int = _spec(int, "cells", 6, "C1 sample grid side")
    hn_fd_step: float = _spec(float, "torus", 1e-4, "finite-difference step")
    seed: int = _spec(int, "1", 0, "rng seed")

    # -- derived objects -------------------------------------------------------

    def linear(self) -> LatticeMatrix:
        m = self.map_matrix
        return LatticeMatrix.from_rows([[m[0], m[1]], [m[2], m[3]]])

    def anosov_map(self, eps: float) -> AnosovMap:
        base = AnosovMap(self.linear())
        if eps == 0.0:
            return base
        return AnosovMap(self.linear(), (Shear(self.map_axis, float(eps), self.map_frequency),))

    def psi(self) -> tuple:
        return tuple(Shear(a, float(s), int(k)) for a, s, k in
                     zip(self.psi_axes, self.psi_amplitudes, self.psi_frequencies) if s != 0.0)

    def conjugated(self, f: AnosovMap) -> AnosovMap:
        psi = self.psi()
        return f.conjugate(psi) if psi else f

    # -- serialization -----------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for fd in dataclasses.fields(self):
            meta = fd.metadata
            value = getattr(self, fd.name)
            items = value if meta["many"] else [value]
            text = ", ".join(_format(meta["kind"], v) for v in items)
            lines.append(f"{_key(fd.name)} : {meta['kind'].__name__}{'[]' if meta['many'] else ''} "
                         f"[{meta['unit']}] = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, require: tuple = REQUIRED) -> "ExperimentConfig":
        fields = {_key(fd.name): fd for fd in dataclasses.fields(cls)}
        values, seen = {}, set()
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            m = _LINE.match(line)
            if m is None:
                name = line.split(":", 1)[0].strip() or "?"
                raise ConfigError(name, "malformed line")
            key = m["key"]
            if key not in fields:
                raise ConfigError(key, "unknown field")
            if key in seen:
                raise ConfigError(key, "duplicate field")
            seen.add(key)
            fd = fields[key]
            meta = fd.metadata
            if m["type"] != meta["kind"].__name__ or bool(m["list"]) != meta["many"]:
                raise ConfigError(key, "type mismatch")
            if m["unit"].strip() != meta["unit"]:
                raise ConfigError(key, f"unit must be {meta['unit']}")
            parts = [p.strip() for p in m["value"].split(",")] if meta["many"] else [m["value"].strip()]
            try:
                parsed = [_parse(meta["kind"], p) for p in parts if p != ""]
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
            if not meta["many"] and len(parsed) != 1:
                raise ConfigError(key, "expected one value")
            values[fd.name] = parsed if meta["many"] else parsed[0]
        for key in require:
            if key not in seen:
                raise ConfigError(key, "missing required field")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.map_matrix) != 4:
            raise ConfigError("map.matrix", "needs 4 entries")
        lin = self.linear()
        if not lin.unimodular or not lin.hyperbolic:
            raise ConfigError("map.matrix", "must be unimodular and hyperbolic")
        if not (len(self.psi_axes) == len(self.psi_amplitudes) == len(self.psi_frequencies)):
            raise ConfigError("psi.axes", "psi lists must have equal length")
        for axis in list(self.psi_axes) + [self.map_axis]:
            if axis not in ("horizontal", "vertical"):
                raise ConfigError("psi.axes" if axis != self.map_axis else "map.axis", f"bad axis {axis!r}")
        k = int(round(len(self.sft_matrix) ** 0.5))
        if k * k != len(self.sft_matrix) or any(v not in (0, 1) for v in self.sft_matrix):
            raise ConfigError("sft.matrix", "must be a square 0/1 matrix")
        words = sum(self.sft_matrix)
        if len(self.sft_potential) != words:
            raise ConfigError("sft.potential", f"needs {words} entries")
        if len(self.sft_observable) != words:
            raise ConfigError("sft.observable", f"needs {words} entries")
        if self.periodic_max_period < 1:
            raise ConfigError("periodic.max_period", "must be positive")
        if not self.hn_contexts:
            raise ConfigError("hn.contexts", "needs at least one entry")

    def config_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))

    def documentation(self) -> list[tuple[str, str, str, str]]:
        """(key, type, unit, doc) rows with defaults rendered in place."""
        default = ExperimentConfig()
        out = []
        for fd in dataclasses.fields(self):
            meta = fd.metadata
            value = getattr(default, fd.name)
            items = value if meta["many"] else [value]
            out.append((_key(fd.name), ", ".join(_format(meta["kind"], v) for v in items),
                        meta["unit"], meta["doc"]))
        return out


def _key(name: str) -> str:
    return name.replace("_", ".", 1) if name != "seed" else name


def _format(kind, value) -> str:
    if kind is float:
        return repr(float(value))
    if kind is bool:
        return "true" if value else "false"
    if kind is str and ("," in value or "\n" in value):
        raise ConfigError("?", "strings may not contain commas")
    return str(value)


def _parse(kind, text: str):
    if kind is bool:
        if text not in ("true", "false"):
            raise ValueError(f"bad bool {text!r}")
        return text == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.loads(fh.read())
