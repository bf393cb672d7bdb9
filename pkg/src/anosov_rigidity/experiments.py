"""The five canonical experiments and their deterministic artifacts."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .construction import (NContext, build_approx_conjugacy, build_frame, c0_distance,
                           construction_report, run_contexts, sample_grid)
from .linearize import ComposedConjugacy
from .periodic import build_weighted_measure, check_periodic_data_matching
from .plotting import curves_svg, line_plot_svg
from .sft import CylinderPotential, Sft, symbolic_ee_experiment
from .srb import Observable, default_observables, equidistribution_experiment


@dataclass
class Artifacts:
    """File name -> text."""

    files: dict = field(default_factory=dict)

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name in sorted(self.files):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.files[name])
            paths.append(path)
        return paths


def _num(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header, rows, config_hash: str) -> str:
    """RFC-4180 CSV whose first column is the config hash."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["config_hash", *header])
    for row in rows:
        w.writerow([config_hash, *(_num(v) for v in row)])
    return buf.getvalue()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(payload: dict, cfg: ExperimentConfig) -> str:
    doc = {"config_hash": cfg.config_hash(), "seed": cfg.seed, **payload}
    return json.dumps(_clean(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _non_increasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


# -- experiments -----------------------------------------------------------------

def run_periodic_data(cfg: ExperimentConfig, threads: int = 1) -> Artifacts:
    """Periodic points with Jacobians and weights per map amplitude, plus the
    matching report for (f, f) and (f, psi f psi^{-1})."""
    art = Artifacts()
    h = cfg.config_hash()
    matching = []
    for i, eps in enumerate(cfg.map_eps):
        f = cfg.anosov_map(eps)
        rows = []
        for n in range(1, cfg.periodic_max_period + 1):
            mu = build_weighted_measure(f, n, threads)
            du, ds = np.exp(mu.log_du), np.exp(mu.log_ds)
            for p, a, b, w in zip(mu.points, du, ds, mu.weights):
                rows.append((n, p[0], p[1], a, b, w))
        art.files[f"periodic_{i}.csv"] = csv_text(
            ["eps", "n", "point_x", "point_y", "Du", "Ds", "weight"],
            [(eps, *r) for r in rows], h)
        g = cfg.conjugated(f)
        pairs = [("identity", f, f, None)]
        if g != f:
            pairs.append(("conjugate", f, g, ComposedConjugacy.between(f, g).evaluate))
        for label, a, b, hmap in pairs:
            for n in range(1, cfg.periodic_max_period + 1):
                rep = check_periodic_data_matching(a, b, hmap, n, threads=threads)
                d = rep.to_dict()
                d.update(eps=eps, pair=label, within_tolerance=rep.within(cfg.periodic_matching_tol))
                matching.append(d)
    art.files["matching.json"] = json_text({"experiment": "periodic-data",
                                            "tolerance": cfg.periodic_matching_tol,
                                            "matching": matching}, cfg)
    return art


def equidist_observables() -> list[Observable]:
    return [Observable.constant(1.0), *default_observables()]


def run_equidistribution(cfg: ExperimentConfig, threads: int = 1) -> Artifacts:
    art = Artifacts()
    h = cfg.config_hash()
    f = cfg.anosov_map(cfg.equidist_eps)
    runs = equidistribution_experiment(f, equidist_observables(), cfg.equidist_periods, threads,
                                       cfg.equidist_grid)
    rows = [(r.observable, n, err, count, Z) for r in runs for n, err, count, Z in r.rows]
    art.files["equidist.csv"] = csv_text(["observable", "n", "error", "atoms", "Z"], rows, h)
    fits = {r.observable: {"reference": r.reference, "fit": r.fit.to_dict() if r.fit else None}
            for r in runs}
    art.files["equidist.json"] = json_text({"experiment": "equidist", "eps": cfg.equidist_eps,
                                            "observables": fits}, cfg)
    series = [(r.observable, [x[0] for x in r.rows], [x[1] for x in r.rows]) for r in runs]
    art.files["equidist.svg"] = line_plot_svg(series, "periodic-orbit equidistribution", "n",
                                              "error", tag=h)
    return art


def sft_objects(cfg: ExperimentConfig):
    k = int(round(math.sqrt(len(cfg.sft_matrix))))
    rows = [cfg.sft_matrix[i * k:(i + 1) * k] for i in range(k)]
    sft = Sft(rows)
    psi = CylinderPotential(sft, 2, tuple(float(v) for v in cfg.sft_potential))
    return sft, psi, sft.words(2), np.asarray(cfg.sft_observable, dtype=float)


def run_sft(cfg: ExperimentConfig, threads: int = 1) -> Artifacts:
    art = Artifacts()
    h = cfg.config_hash()
    sft, psi, words, values = sft_objects(cfg)
    exp = symbolic_ee_experiment(sft, psi, words, values, cfg.sft_periods)
    art.files["sft.csv"] = csv_text(["n", "error", "periodic_words"], exp.rows, h)
    rel = abs(exp.fit.tau - exp.oracle_tau) / exp.oracle_tau
    art.files["sft.json"] = json_text({
        "experiment": "sft", "pressure": exp.pressure, "oracle_pressure": exp.oracle_pressure,
        "pressure_gap": abs(exp.pressure - exp.oracle_pressure), "fit": exp.fit.to_dict(),
        "oracle_tau": exp.oracle_tau, "tau_relative_gap": rel}, cfg)
    art.files["sft.svg"] = line_plot_svg([("error", [r[0] for r in exp.rows], [r[1] for r in exp.rows])],
                                         "symbolic equidistribution", "n", "error", tag=h)
    return art


def _frame(cfg: ExperimentConfig):
    f = cfg.anosov_map(cfg.hn_eps)
    return build_frame(f, cfg.conjugated(f))


def run_build_hn(cfg: ExperimentConfig, threads: int = 1) -> Artifacts:
    art = Artifacts()
    h = cfg.config_hash()
    frame = _frame(cfg)
    approx = build_approx_conjugacy(frame, NContext(cfg.hn_build_n))
    grid = sample_grid(cfg.hn_grid)
    c0_1 = c0_distance(approx, grid, 1)
    c0_2 = c0_distance(approx, grid, 2)
    up, sp = approx.unstable_part, approx.stable_part
    curves, rows = [], []
    for name, seg in (("unstable_f", frame.unstable_f), ("stable_f", frame.stable_f),
                      ("unstable_g", frame.unstable_g), ("stable_g", frame.stable_g)):
        t = np.linspace(seg.t_min, seg.t_max, 201)
        pts = seg.lift_point(t)
        curves.append((name, pts[:, 0], pts[:, 1]))
        rows += [(name, i, ti, x, y) for i, (ti, (x, y)) in enumerate(zip(t, pts))]
    art.files["hn_polylines.csv"] = csv_text(["curve", "index", "param", "x", "y"], rows, h)
    art.files["hn.json"] = json_text({
        "experiment": "build-hn", "N": cfg.hn_build_n, "frame": frame.to_dict(),
        "c0_stage1": c0_1, "c0": c0_2,
        "endpoint_residuals": {"unstable": up.endpoint_residual(), "stable": sp.endpoint_residual()},
        "derivative_residuals": {"unstable": up.derivative_residual(), "stable": sp.derivative_residual()},
        "sigma_deviation": {"unstable": up.sigma_deviation, "stable": sp.sigma_deviation},
        "identity_case": frame.g == frame.f}, cfg)
    art.files["hn.svg"] = curves_svg(curves, "heteroclinic frame", tag=h)
    return art


def run_compare(cfg: ExperimentConfig, threads: int = 1) -> Artifacts:
    art = Artifacts()
    h = cfg.config_hash()
    frame = _frame(cfg)
    results = run_contexts(frame, cfg.hn_contexts, cfg.hn_grid, cfg.hn_c1_grid, cfg.hn_fd_step)
    art.files["compare.csv"] = csv_text(
        ["N", "c0", "c0_stage1", "c1_value", "c1_jacobian", "c1"],
        [(r.N, r.c0, r.c0_stage1, r.c1_value, r.c1_jacobian, r.c1_value + r.c1_jacobian)
         for r in results], h)
    c0 = [r.c0 for r in results]
    c1 = [r.c1_value + r.c1_jacobian for r in results]
    report = construction_report(frame, results)
    report.update(experiment="compare", c0_non_increasing=_non_increasing(c0),
                  c1_non_increasing=_non_increasing(c1))
    art.files["compare.json"] = json_text(report, cfg)
    ns = [r.N for r in results]
    art.files["compare.svg"] = line_plot_svg([("c0", ns, c0), ("c1", ns, c1)],
                                             "distance to the conjugacy", "N", "distance", tag=h)
    return art


EXPERIMENTS = {
    "periodic-data": run_periodic_data,
    "equidist": run_equidistribution,
    "sft": run_sft,
    "build-hn": run_build_hn,
    "compare": run_compare,
}
