"""Seeded benchmark experiments: RMFGP against plain GP and SAVE-reduced GP.

An experiment is described by a JSON config validated against the bundled
schema.  Every (seed, N_H) cell generates its own data from fixed sub-seeds,
so cells are independent and the CSV outputs are pure functions of the
config.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import scipy

from .benchmarks import (
    ReducedSurrogateSpec,
    get_problem,
    mean_squared_error,
    reference_reduction,
    relative_error,
    uncertainty_propagation,
)
from .data import Dataset, Fidelity, make_nested, nested_indices, sample_uniform
from .errors import ConfigError, SliceTooSmall, TooFewDistinct
from .gp import GPConfig, fit_gp, predict
from .pipeline import RmfgpConfig, finalize, run_loop
from .sdr import default_slice_count, normalize_bic_display, save, subspace_distance

logger = logging.getLogger(__name__)

SCHEMA_FILE = "experiment-v1.json"
METHOD_ORDER = ("rmfgp_flag0", "gp", "rmfgp_flag1", "gp_save", "pure_save")
PURE_SAVE_SAMPLES = 10000

DEFAULTS = {
    "flags": [0, 1],
    "s": 3,
    "H": 10,
    "n_mc": 100,
    "d": None,
    "eta": 0.0,
    "baselines": ["gp", "gp_save"],
    "estimator": "save",
    "gpdr_alternations": 5,
    "gp_restarts": 5,
}

PROBLEM_DEFAULTS = {
    "linear": {"N_H": [25, 30, 35, 40], "batch_sizes": [5, 5]},
    "nonlinear": {"N_H": [10, 15, 20, 25], "batch_sizes": [2, 3]},
    "advection": {"N_H": [20, 25, 30, 35], "batch_sizes": [5, 5],
                  "up": {"N_H": 35}},
    "elliptic": {"N_H": [20, 25, 30, 35], "batch_sizes": [2, 3], "d": "reference",
                 "up": {"N_H": 35}},
}

UP_DEFAULTS = {"n_grid": 50, "n_xi": 2000, "n_truth": 100000, "seed": 0}


def load_schema() -> dict:
    text = resources.files("rmfgp").joinpath("schemas", SCHEMA_FILE).read_text(encoding="utf-8")
    return json.loads(text)


def default_config(problem: str, seeds=(0, 1, 2, 3, 4)) -> dict:
    """Config reproducing the standard study for one benchmark problem."""
    if problem not in PROBLEM_DEFAULTS:
        raise ConfigError(f"unknown problem {problem!r}")
    cfg = {"schema_version": 1, "problem": problem, "N_L": 200, "N_T": 500,
           "seeds": list(seeds), "baselines": ["gp", "gp_save", "pure_save"]}
    cfg.update({k: v for k, v in PROBLEM_DEFAULTS[problem].items()})
    return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def start_offset(self) -> int:
        return int(sum(self.raw["batch_sizes"]))

    @property
    def up(self) -> Optional[dict]:
        if "up" not in self.raw:
            return None
        return {**UP_DEFAULTS, **self.raw["up"]}

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_config(raw: dict) -> ExperimentConfig:
    """Schema check, defaults, then cross-field checks.  Raises ConfigError."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    cfg = {**DEFAULTS, **raw}
    offset = sum(cfg["batch_sizes"])
    for nh in cfg["N_H"]:
        start = nh - offset
        if start < 3:
            raise ConfigError(f"N_H={nh} leaves {start} starting high-fidelity points; need >= 3")
        if nh > cfg["N_L"]:
            raise ConfigError(f"N_H={nh} exceeds N_L={cfg['N_L']}; high inputs must nest in low")
    p = get_problem(cfg["problem"]).p
    if 1 in cfg["flags"] and not 1 < cfg["s"] < p:
        raise ConfigError(f"s={cfg['s']} must satisfy 1 < s < p={p}")
    if isinstance(cfg["d"], int) and cfg["d"] >= p:
        raise ConfigError(f"d={cfg['d']} must be below p={p}")
    if "up" in cfg:
        up = {**UP_DEFAULTS, **cfg["up"]}
        if up.get("N_H", cfg["N_H"][-1]) not in cfg["N_H"]:
            raise ConfigError("up.N_H must be one of the N_H checkpoints")
        if get_problem(cfg["problem"]).family is None:
            raise ConfigError(f"problem {cfg['problem']!r} has no spatial family for UP")
    return ExperimentConfig(cfg)


# ---------------------------------------------------------------------------
# Cell execution
# ---------------------------------------------------------------------------

@dataclass
class CellRecord:
    seed: int
    n_high: int
    method: str
    relative_error: float
    subspace_distance: float = float("nan")
    d: Optional[int] = None
    degenerate: bool = False
    predictions: Optional[np.ndarray] = field(default=None, repr=False)
    reduced_test: Optional[np.ndarray] = field(default=None, repr=False)
    detail: dict = field(default_factory=dict, repr=False)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    bic_rows: list
    test_y: dict  # (seed, N_H) -> exact test responses
    up: Optional[dict] = None
    timing: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def table(self, metric: str) -> dict:
        """{method: {N_H: seed-average}} for ``metric``."""
        out = {}
        for rec in self.records:
            out.setdefault(rec.method, {}).setdefault(rec.n_high, []).append(getattr(rec, metric))
        return {m: {nh: float(np.mean(v)) for nh, v in cols.items()} for m, cols in out.items()}

    def methods(self) -> list:
        present = {r.method for r in self.records}
        return [m for m in METHOD_ORDER if m in present]


def _comparison_d(cfg: ExperimentConfig, problem) -> int:
    d = cfg["d"]
    if isinstance(d, int):
        return d
    return problem.dimension()


def _datasets(problem, cfg: ExperimentConfig, seed: int, n_high: int):
    p = problem.p
    XL = sample_uniform(cfg["N_L"], p, [seed, 0])
    low = Dataset(XL, problem.low_eval(XL), Fidelity.LOW)
    XT = sample_uniform(cfg["N_T"], p, [seed, 2])
    test = Dataset(XT, problem.high_eval(XT), Fidelity.TEST)
    start = make_nested(low, n_high - cfg.start_offset, problem.high_eval, [seed, 1])
    base_idx = nested_indices(low.n, n_high, [seed, 1])
    base = Dataset(XL[base_idx], problem.high_eval(XL[base_idx]), Fidelity.HIGH,
                   source_indices=base_idx)
    return low, start, test, base


def _fit_reduced(train: Dataset, transform, test: Dataset, restarts: int, seed: int):
    model = fit_gp(train.X @ transform, train.y, GPConfig(restarts=restarts, seed=seed))
    mu, _ = predict(model, test.X @ transform)
    return model, mu


def _save_reduction(X, y, d: int, H: int):
    """Top-d SAVE basis; flags n <= p or unusable slices as degenerate."""
    n, p = X.shape
    degenerate = n <= p
    try:
        res = save(X, y, default_slice_count(n, H), strict=False)
    except (SliceTooSmall, TooFewDistinct) as exc:
        logger.warning("SAVE degenerate (%s); falling back to leading coordinates", exc)
        return np.eye(p)[:, :d], True
    return res.basis(d), degenerate or res.degenerate


def run_baseline_gp_save(problem, n_high: int, seed: int, d: int, test: Dataset,
                         train: Optional[Dataset] = None, H: int = 10, restarts: int = 5,
                         gp_subsample: Optional[int] = None):
    """SAVE on the high-fidelity points alone, then a GP on the top-d projection.

    ``gp_subsample`` caps the GP training set (first rows) when SAVE uses a
    very large sample.
    """
    if train is None:
        X = sample_uniform(n_high, problem.p, [seed, 1])
        train = Dataset(X, problem.high_eval(X), Fidelity.HIGH)
    basis, degenerate = _save_reduction(train.X, train.y, d, H)
    gp_train = train
    if gp_subsample is not None and train.n > gp_subsample:
        gp_train = Dataset(train.X[:gp_subsample], train.y[:gp_subsample], Fidelity.HIGH)
    _, mu = _fit_reduced(gp_train, basis, test, restarts, seed)
    m = _true_distance(problem, basis)
    return m, relative_error(test.y, mu), degenerate, basis, mu


def _true_distance(problem, basis) -> float:
    # projector distance is defined for any rank; a wrong d is penalized, not dropped
    return subspace_distance(problem.subspace(), basis)


def run_cell(problem, cfg: ExperimentConfig, seed: int, n_high: int):
    """All methods for one (seed, N_H) cell; returns records, BIC rows, test y, UP specs."""
    low, start, test, base = _datasets(problem, cfg, seed, n_high)
    restarts = cfg["gp_restarts"]
    d_cmp = _comparison_d(cfg, problem)
    d_rm = d_cmp if cfg["d"] is not None else None
    rcfg = RmfgpConfig(
        flag=1, s=cfg["s"], H=cfg["H"], batch_sizes=tuple(cfg["batch_sizes"]),
        eta=cfg["eta"], n_mc=cfg["n_mc"], seed=seed, alternations=cfg["gpdr_alternations"],
        d=d_rm, estimator=cfg["estimator"], surrogate_restarts=restarts,
    )
    records, bic_rows, specs = [], [], {}
    outcome = run_loop(low, start, test, rcfg, problem.high_eval)
    history = outcome.history
    for flag in cfg["flags"]:
        res = finalize(outcome, flag=flag)
        mu, _ = res.predict(test.X)
        if flag == 0:
            m = _true_distance(problem, res.M1[:, :d_cmp])
            d = None
        else:
            m = _true_distance(problem, res.M)
            d = res.d_hat
            for k, (g, gd) in enumerate(zip(res.G, normalize_bic_display(res.G)), start=1):
                bic_rows.append((seed, n_high, k, float(g), float(gd), int(k == res.d_hat)))
            specs["rmfgp"] = ReducedSurrogateSpec(res.M, res.final_high.X)
        records.append(CellRecord(seed, n_high, f"rmfgp_flag{flag}", relative_error(test.y, mu), m, d,
                                  predictions=mu, reduced_test=test.X @ res.M[:, :1],
                                  detail={"history": history, "result": res.to_manifest()}))

    baselines = cfg["baselines"]
    if "gp" in baselines:
        eye = np.eye(problem.p)
        _, mu = _fit_reduced(base, eye, test, restarts, seed)
        records.append(CellRecord(seed, n_high, "gp", relative_error(test.y, mu), predictions=mu))
    if "gp_save" in baselines:
        m, err, degenerate, basis, mu = run_baseline_gp_save(
            problem, n_high, seed, d_cmp, test, base, cfg["H"], restarts)
        records.append(CellRecord(seed, n_high, "gp_save", err, m, d_cmp, degenerate, mu,
                                  test.X @ basis[:, :1], {"basis": basis.tolist()}))
        specs["gp_save"] = ReducedSurrogateSpec(basis, base.X)
    if "pure_save" in baselines:
        ref = reference_reduction(problem, n=PURE_SAVE_SAMPLES, H=cfg["H"])[3]
        basis = ref.basis(d_cmp)
        _, mu = _fit_reduced(base, basis, test, restarts, seed)
        records.append(CellRecord(seed, n_high, "pure_save", relative_error(test.y, mu),
                                  _true_distance(problem, basis), d_cmp, False, mu,
                                  test.X @ basis[:, :1]))
        specs["pure_save"] = ReducedSurrogateSpec(basis, base.X)
    return records, bic_rows, test.y, specs


def run_experiment(config, out_dir=None, write: bool = True) -> ExperimentReport:
    """Run every (seed, N_H) cell, the optional UP study, and write outputs."""
    cfg = config if isinstance(config, ExperimentConfig) else validate_config(config)
    problem = get_problem(cfg["problem"])
    out = Path(out_dir or cfg.raw.get("output_dir") or ".")
    records, bic_rows, test_y, timing = [], [], {}, {}
    up_specs = {}
    up = cfg.up
    for seed in cfg["seeds"]:
        for n_high in cfg["N_H"]:
            t0 = time.perf_counter()
            recs, bic, ty, specs = run_cell(problem, cfg, seed, n_high)
            timing[f"{seed}/{n_high}"] = time.perf_counter() - t0
            records += recs
            bic_rows += bic
            test_y[(seed, n_high)] = ty
            if up is not None and n_high == up.get("N_H", cfg["N_H"][-1]):
                up_specs[seed] = specs
    report = ExperimentReport(cfg, records, bic_rows, test_y, timing=timing)
    if up is not None:
        t0 = time.perf_counter()
        report.up = run_up_study(problem, up_specs, up, cfg["gp_restarts"])
        timing["up"] = time.perf_counter() - t0
    report.manifest = build_manifest(report)
    if write:
        write_report(report, out)
    return report


def run_up_study(problem, specs_by_seed: dict, up: dict, restarts: int) -> dict:
    """Per-seed UP curves plus their seed average; truth shared across seeds."""
    grid = np.linspace(0.0, 1.0, up["n_grid"])
    per_seed = {}
    for seed, specs in specs_by_seed.items():
        curves = uncertainty_propagation(
            problem, specs, grid, n_xi=up["n_xi"], seed=up["seed"], n_truth=up["n_truth"],
            gp_config=GPConfig(restarts=restarts, seed=seed))
        per_seed[seed] = curves
    first = next(iter(per_seed.values()))
    methods = list(first.mean)
    avg = {
        "x": grid,
        "mean_truth": first.mean_truth,
        "std_truth": first.std_truth,
        "mean": {m: np.mean([c.mean[m] for c in per_seed.values()], axis=0) for m in methods},
        "std": {m: np.mean([c.std[m] for c in per_seed.values()], axis=0) for m in methods},
        "pstd": {m: np.mean([c.predictive_std[m] for c in per_seed.values()], axis=0)
                 for m in methods},
    }
    dist = {m: float(np.mean([c.l2_distance(m) for c in per_seed.values()])) for m in methods}
    return {"per_seed": per_seed, "average": avg, "l2_distance": dist, "N_H": up.get("N_H")}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    """Round-trip float formatting (17 significant digits); empty for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return format(v, ".17g")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def write_report(report: ExperimentReport, out: Path) -> list:
    """Tables, per-seed records, BIC rows, plot data and the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    written = []
    n_cols = cfg["N_H"]
    for metric, name in (("relative_error", "relative_error"),
                         ("subspace_distance", "subspace_distance")):
        table = report.table(metric)
        methods = [m for m in report.methods()
                   if metric == "relative_error" or m in ("rmfgp_flag1", "gp_save", "pure_save")]
        path = out / f"table_{name}.csv"
        _write_csv(path, ["method"] + [f"N_H={nh}" for nh in n_cols],
                   [[m] + [table[m].get(nh) for nh in n_cols] for m in methods])
        written.append(path)
    path = out / "records.csv"
    _write_csv(path, ["seed", "N_H", "method", "relative_error", "subspace_distance", "d", "degenerate"],
               [[r.seed, r.n_high, r.method, r.relative_error, r.subspace_distance, r.d, r.degenerate]
                for r in report.records])
    written.append(path)
    path = out / "bic.csv"
    _write_csv(path, ["seed", "N_H", "k", "G", "G_display", "selected"], report.bic_rows)
    written.append(path)
    written += emit_plot_data(report, out)
    path = out / "manifest.json"
    path.write_text(json.dumps(report.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written


def emit_plot_data(report: ExperimentReport, out: Path) -> list:
    """CSV data behind the MSE, correlation, prediction and UP figures."""
    out = Path(out) / "plots"
    cfg = report.config
    written = []
    methods = report.methods()
    rows = []
    for nh in cfg["N_H"]:
        for m in methods:
            vals = [mean_squared_error(report.test_y[(r.seed, nh)], r.predictions)
                    for r in report.records if r.method == m and r.n_high == nh]
            rows.append([nh, m, float(np.mean(vals))])
    path = out / "mse.csv"
    _write_csv(path, ["N_H", "method", "mse"], rows)
    written.append(path)

    seed0 = cfg["seeds"][0]
    for nh in cfg["N_H"]:
        recs = {r.method: r for r in report.records if r.seed == seed0 and r.n_high == nh}
        y = report.test_y[(seed0, nh)]
        path = out / f"correlation_N_H={nh}.csv"
        _write_csv(path, ["index", "exact"] + [f"pred_{m}" for m in methods],
                   [[i, y[i]] + [recs[m].predictions[i] for m in methods] for i in range(y.shape[0])])
        written.append(path)
        reduced = [m for m in methods if recs[m].reduced_test is not None]
        path = out / f"prediction_curve_N_H={nh}.csv"
        _write_csv(path, ["index", "method", "x_d", "exact", "predicted"],
                   [[i, m, recs[m].reduced_test[i, 0], y[i], recs[m].predictions[i]]
                    for m in reduced for i in range(y.shape[0])])
        written.append(path)

    if report.up is not None:
        avg = report.up["average"]
        extra = [m for m in avg["mean"] if m not in ("rmfgp", "gp_save")]
        header = ["x_index", "x", "mean_truth", "mean_rmfgp", "mean_baseline", "std_truth",
                  "std_rmfgp", "std_baseline", "pstd_rmfgp", "pstd_baseline"]
        for m in extra:
            header += [f"mean_{m}", f"std_{m}", f"pstd_{m}"]
        rows = []
        for i, xv in enumerate(avg["x"]):
            row = [i, xv, avg["mean_truth"][i], avg["mean"]["rmfgp"][i], avg["mean"]["gp_save"][i],
                   avg["std_truth"][i], avg["std"]["rmfgp"][i], avg["std"]["gp_save"][i],
                   avg["pstd"]["rmfgp"][i], avg["pstd"]["gp_save"][i]]
            for m in extra:
                row += [avg["mean"][m][i], avg["std"][m][i], avg["pstd"][m][i]]
            rows.append(row)
        path = out / "up_curves.csv"
        _write_csv(path, header, rows)
        written.append(path)
        path = out / "up_distance.csv"
        _write_csv(path, ["method", "l2_distance_mean", "avg_std", "avg_predictive_std"],
                   [[m, report.up["l2_distance"][m], float(np.mean(avg["std"][m])),
                     float(np.mean(avg["pstd"][m]))] for m in avg["mean"]])
        written.append(path)
    return written


def build_manifest(report: ExperimentReport) -> dict:
    from . import __version__

    cfg = report.config
    cells = {}
    for r in report.records:
        key = f"{r.method}/seed={r.seed}/N_H={r.n_high}"
        cells[key] = {"relative_error": r.relative_error,
                      "subspace_distance": None if np.isnan(r.subspace_distance) else r.subspace_distance,
                      "d": r.d, "degenerate": bool(r.degenerate), **r.detail}
    return {
        "config": cfg.raw,
        "config_sha256": cfg.digest(),
        "seeds": list(cfg["seeds"]),
        "software": {"rmfgp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "rng": "numpy.random.PCG64; streams keyed by [seed, role]",
        "cells": cells,
        "up_l2_distance": None if report.up is None else report.up["l2_distance"],
        "timing_seconds": report.timing,
    }
