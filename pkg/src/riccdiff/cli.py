"""Reproducible experiment driver.

``riccdiff <experiment> --config cfg.json [--out DIR] [--seed N] [--threads N]``
runs one named experiment from a strict-schema JSON config and writes
``results.csv`` (one row per estimate), ``summary.json`` (aggregates and
pass/fail verdicts), ``plotdata/*.csv`` (long-format series), and
``MANIFEST.json`` (completed stages).  ``riccdiff report DIR`` prints the
verdict table of a result directory.

Exit codes: 0 all verdicts pass, 1 some verdict failed, 2 usage or config
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, dyson, enkf, matcore, mc, riccati, set_threads
from .errors import ConfigError, RiccdiffError

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "simulate",
    "moments",
    "bias",
    "fluctuation",
    "semigroup",
    "det-decay",
    "dyson-compare",
    "enkf",
    "stationarity",
)

_RUN_KEYS = {
    "T", "dt", "n_paths", "seed", "eps_grid", "n_orders", "time_grid",
    "Q0", "Q0_b", "n", "N", "flavor", "n_runs", "lam0", "slope_target",
    "slope_tol", "nu", "threshold",
}

_MODEL_KEYS_RICCATI = {"r", "A", "R", "S", "kappa", "varpi", "eps"}
_MODEL_KEYS_ENKF = {"r", "A", "B", "R1", "R2"}


def _fingerprint() -> str:
    import numba

    return f"riccdiff-{__version__}/numpy-{np.__version__}/numba-{numba.__version__}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# config parsing


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    run: dict
    output: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _as_matrix(value, r: int | None, where: str, errs: list) -> np.ndarray | None:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if r is None:
            errs.append(f"{where}: scalar shorthand needs model.r")
            return None
        return float(value) * np.eye(r)
    if isinstance(value, list):
        try:
            m = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            errs.append(f"{where}: not a numeric matrix")
            return None
        if m.ndim != 2:
            errs.append(f"{where}: must be a 2-d array")
            return None
        return m
    errs.append(f"{where}: must be a number or nested list")
    return None


def _num(d: dict, key: str, where: str, errs: list, default=None, lo=None,
         hi=None, integer=False, strict_lo=False):
    if key not in d:
        if default is None:
            errs.append(f"{where}.{key}: required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.append(f"{where}.{key}: must be a number")
        return default
    if integer and int(v) != v:
        errs.append(f"{where}.{key}: must be an integer")
        return default
    if lo is not None and (v <= lo if strict_lo else v < lo):
        op = ">" if strict_lo else ">="
        errs.append(f"{where}.{key}: must be {op} {lo}")
        return default
    if hi is not None and v > hi:
        errs.append(f"{where}.{key}: must be <= {hi}")
        return default
    return int(v) if integer else float(v)


def parse_config(text: str) -> ExperimentConfig:
    """Validate a config document; collects every schema violation."""
    errs: list[str] = []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be an object"])
    allowed_top = {"schema_version", "experiment", "model", "run", "output"}
    for k in doc:
        if k not in allowed_top:
            errs.append(f"unknown top-level key {k!r}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        errs.append(f"schema_version: must equal {SCHEMA_VERSION}")
    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        errs.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
        raise ConfigError(errs)
    model = doc.get("model")
    run = doc.get("run", {})
    output = doc.get("output", {})
    if not isinstance(model, dict):
        errs.append("model: required object")
        raise ConfigError(errs)
    if not isinstance(run, dict):
        errs.append("run: must be an object")
        raise ConfigError(errs)
    if not isinstance(output, dict):
        errs.append("output: must be an object")
        output = {}

    model_keys = _MODEL_KEYS_ENKF if experiment == "enkf" else _MODEL_KEYS_RICCATI
    for k in model:
        if k not in model_keys:
            errs.append(f"model.{k}: unknown key")
    for k in run:
        if k not in _RUN_KEYS:
            errs.append(f"run.{k}: unknown key")
    for k in output:
        if k not in {"directory", "formats"}:
            errs.append(f"output.{k}: unknown key")
    fmts = output.get("formats", ["csv", "json"])
    if not isinstance(fmts, list) or not set(fmts) <= {"csv", "json"}:
        errs.append("output.formats: must be a subset of ['csv', 'json']")

    r = _num(model, "r", "model", errs, default=0, lo=1, integer=True) or None
    parsed_model: dict = {"r": r}
    warnings: list[str] = []
    if experiment == "enkf":
        for key in ("A", "B", "R1", "R2"):
            if key not in model:
                errs.append(f"model.{key}: required")
            else:
                parsed_model[key] = _as_matrix(model[key], r, f"model.{key}", errs)
        if not errs:
            try:
                parsed_model["filter_model"] = enkf.FilterModel(
                    A=parsed_model["A"], B=parsed_model["B"],
                    R1=parsed_model["R1"], R2=parsed_model["R2"])
            except RiccdiffError as exc:
                errs.append(f"model: {exc}")
    else:
        for key in ("A", "R", "S"):
            if key not in model:
                errs.append(f"model.{key}: required")
            else:
                parsed_model[key] = _as_matrix(model[key], r, f"model.{key}", errs)
        kappa = _num(model, "kappa", "model", errs, default=1, integer=True)
        if kappa not in (0, 1):
            errs.append("model.kappa: must be 0 or 1")
            kappa = 1
        varpi = _num(model, "varpi", "model", errs, default=0.0, lo=0.0)
        eps = _num(model, "eps", "model", errs, default=0.0, lo=0.0)
        if not errs:
            try:
                params = riccati.ModelParams(
                    A=parsed_model["A"], R=parsed_model["R"], S=parsed_model["S"],
                    kappa=int(kappa), varpi=varpi, eps=eps)
                parsed_model["params"] = params
                thr = riccati.thresholds(params, 1)
                if params.kappa == 1 and params.eps > thr.eps0:
                    warnings.append(
                        f"eps = {params.eps:g} exceeds eps0 = {thr.eps0:.6g}")
            except RiccdiffError as exc:
                errs.append(f"model: {exc}")

    parsed_run = dict(run)
    parsed_run["T"] = _num(run, "T", "run", errs, default=1.0, strict_lo=True, lo=0.0)
    parsed_run["dt"] = _num(run, "dt", "run", errs, default=1e-3, strict_lo=True, lo=0.0)
    parsed_run["n_paths"] = _num(run, "n_paths", "run", errs, default=10_000,
                                 lo=2, integer=True)
    parsed_run["seed"] = _num(run, "seed", "run", errs, default=0, lo=0, integer=True)
    for key in ("eps_grid", "time_grid", "n_orders", "lam0"):
        if key in run:
            v = run[key]
            if (not isinstance(v, list) or not v
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
                errs.append(f"run.{key}: must be a nonempty numeric list")
            else:
                parsed_run[key] = [float(x) for x in v]
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(experiment=experiment, model=parsed_model,
                            run=parsed_run, output=dict(output, formats=fmts),
                            warnings=warnings)


# ---------------------------------------------------------------------------
# result writing


class ResultWriter:
    """Accumulates append-only result rows and verdicts, then flushes the
    standard file set."""

    def __init__(self, outdir: Path, experiment: str, n_paths: int):
        self.outdir = outdir
        self.experiment = experiment
        self.n_paths = n_paths
        self.rows: list[dict] = []
        self.verdicts: list[dict] = []
        self.stages: list[str] = []
        self.series: dict[str, list[tuple]] = {}
        self.t0 = time.perf_counter()
        self.fingerprint = _fingerprint()

    def row(self, param: str, estimate: float, stderr: float = 0.0,
            n_paths: int | None = None, diverged: float = 0.0):
        self.rows.append({
            "experiment": self.experiment,
            "param": param,
            "estimate": estimate,
            "stderr": stderr,
            "n_paths": self.n_paths if n_paths is None else n_paths,
            "diverged_fraction": diverged,
        })

    def verdict(self, vid: str, target: str, measured: float, ok: bool):
        self.verdicts.append({
            "id": vid, "target": target,
            "measured": float(measured) if np.isfinite(measured) else str(measured),
            "pass": bool(ok),
        })

    def series_point(self, name: str, x: float, y: float, stderr: float = 0.0):
        self.series.setdefault(name, []).append((x, y, stderr))

    def stage_done(self, name: str):
        self.stages.append(name)
        self.flush()

    def flush(self, config_echo: dict | None = None, warnings=()):
        self.outdir.mkdir(parents=True, exist_ok=True)
        wall = time.perf_counter() - self.t0
        with open(self.outdir / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "param", "estimate", "stderr", "n_paths",
                        "diverged_fraction", "wall_time_s", "fingerprint"])
            for row in self.rows:
                w.writerow([
                    row["experiment"], row["param"], _fmt(float(row["estimate"])),
                    _fmt(float(row["stderr"])), row["n_paths"],
                    _fmt(float(row["diverged_fraction"])),
                    _fmt(round(wall, 3)), self.fingerprint,
                ])
        summary = {
            "experiment": self.experiment,
            "verdicts": self.verdicts,
            "pass": all(v["pass"] for v in self.verdicts) if self.verdicts else True,
            "warnings": list(warnings),
            "fingerprint": self.fingerprint,
        }
        if config_echo is not None:
            summary["config"] = config_echo
        with open(self.outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        if self.series:
            pdir = self.outdir / "plotdata"
            pdir.mkdir(exist_ok=True)
            for name, pts in self.series.items():
                with open(pdir / f"{name}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["x", "y", "stderr"])
                    for x, y, se in pts:
                        w.writerow([_fmt(float(x)), _fmt(float(y)), _fmt(float(se))])
        with open(self.outdir / "MANIFEST.json", "w") as fh:
            json.dump({"completed_stages": self.stages}, fh, indent=2)
        return summary


# ---------------------------------------------------------------------------
# experiment implementations


def _q0_from_run(run: dict, r: int) -> np.ndarray:
    q0 = run.get("Q0")
    if q0 is None:
        return np.eye(r)
    if isinstance(q0, (int, float)):
        return float(q0) * np.eye(r)
    return np.asarray(q0, dtype=float)


def _exp_simulate(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    grid = run.get("time_grid") or [run["T"]]
    batch = riccati.simulate_batch(params, q0, grid, run["dt"],
                                   run["n_paths"], run["seed"], track_e=True)
    for j, t in enumerate(batch.t_grid):
        tr = mc.traces(batch.Q[:, j])
        mean, se, _ = mc.batch_means(tr)
        w.row(f"t={t:g} mean_trace", mean, se, diverged=batch.diverged_fraction)
        w.series_point("mean_trace", t, mean, se)
    # Liouville cross-check on the recorded snapshots
    sign, logabs = np.linalg.slogdet(batch.E[:, -1])
    gap = np.abs(logabs - batch.logdet[:, -1])
    rel = gap / (1.0 + np.abs(batch.logdet[:, -1]))
    w.row("liouville_max_rel_gap", float(rel.max()))
    w.verdict("liouville", "max rel gap <= 1e-6", float(rel.max()),
              bool(rel.max() <= 1e-6))
    w.row("floor_rate", batch.floor_rate)
    w.stage_done("simulate")


def _exp_moments(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    orders = [int(n) for n in run.get("n_orders", [1, 2])]
    t = run["T"]
    for n in orders:
        sampler = mc.riccati_terminal_sampler(params, q0, t, run["dt"])
        est = mc.estimate_moment_norm(sampler, mc.traces, n, run["n_paths"],
                                      run["seed"])
        bound, cap = riccati.trace_moment_bound(params, n, t, q0)
        w.row(f"n={n} trace_moment", est.value, est.stderr,
              diverged=est.diverged_fraction)
        w.row(f"n={n} bound", bound if math.isfinite(bound) else float("inf"))
        ok = (not math.isfinite(bound)) or est.value <= bound + 3 * est.stderr
        w.verdict(f"moment_n{n}_below_bound", "estimate <= bound + 3 SE",
                  est.value, bool(ok))
        w.series_point("trace_moments", n, est.value, est.stderr)
    w.stage_done("moments")


def _exp_bias(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    eps_grid = run.get("eps_grid") or [0.05, 0.1, 0.2, 0.4]
    fit = mc.bias_curve(params, q0, run["T"], eps_grid, run["n_paths"],
                        run["seed"], dt=run["dt"])
    for e, resp, se, lam, lam_se, df in zip(
            fit.eps_grid, fit.responses, fit.response_stderrs,
            fit.extras["lam_min"], fit.extras["lam_min_stderr"],
            fit.extras["diverged_fraction"]):
        w.row(f"eps={e:g} bias", resp, se, diverged=df)
        w.series_point("bias_response", e, resp, se)
        ok = lam >= -3.0 * lam_se
        w.verdict(f"loewner_sign_eps{e:g}", "lam_min >= -3 SE", lam, bool(ok))
    w.row("slope", fit.slope, fit.slope_stderr)
    target = run.get("slope_target", 2.0)
    tol = run.get("slope_tol", 0.3)
    w.verdict("bias_slope", f"{target} +/- {tol}", fit.slope,
              bool(abs(fit.slope - target) <= max(tol, 2 * fit.slope_stderr)))
    w.stage_done("bias")


def _exp_fluctuation(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    eps_grid = run.get("eps_grid") or [0.05, 0.1, 0.2, 0.4]
    n = int(run.get("n", 2))
    fit = mc.fluctuation_curve(params, q0, run["T"], n, eps_grid,
                               run["n_paths"], run["seed"], dt=run["dt"])
    for e, resp, se, df in zip(fit.eps_grid, fit.responses,
                               fit.response_stderrs,
                               fit.extras["diverged_fraction"]):
        w.row(f"eps={e:g} fluctuation", resp, se, diverged=df)
        w.series_point("fluctuation_response", e, resp, se)
    w.row("slope", fit.slope, fit.slope_stderr)
    target = run.get("slope_target", 1.0)
    tol = run.get("slope_tol", 0.2)
    w.verdict("fluctuation_slope", f"{target} +/- {tol}", fit.slope,
              bool(abs(fit.slope - target) <= max(tol, 2 * fit.slope_stderr)))
    times = run.get("time_grid") or [1.0, 2.0, 5.0, 10.0]
    mid_eps = float(eps_grid[len(eps_grid) // 2])
    profile = mc.fluctuation_time_profile(params.with_eps(mid_eps), q0, times,
                                          n, run["n_paths"], run["seed"],
                                          dt=run["dt"])
    vals = list(profile.values())
    ratio = max(vals) / min(vals) if min(vals) > 0 else math.inf
    for t, v in profile.items():
        w.series_point("fluctuation_vs_time", t, v)
    w.row("time_uniformity_ratio", ratio)
    w.verdict("time_uniformity", "max/min <= 1.3 over time grid", ratio,
              bool(ratio <= 1.3))
    w.stage_done("fluctuation")


def _exp_semigroup(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    batch = riccati.simulate_batch(params, q0, [run["T"]], run["dt"],
                                   run["n_paths"], run["seed"], track_e=True)
    stats = mc.lyapunov_exponent(batch)
    p_inf = riccati.solve_fixed_point(params)
    mu_half = 0.5 * matcore.log_norm(params.A - p_inf @ params.S)
    frac = stats.fraction_below(mu_half)
    for q, v in stats.quantiles().items():
        w.row(f"exponent_q{q:g}", v)
        w.series_point("exponent_quantiles", q, v)
    w.row("fraction_below_mu_half", frac, diverged=batch.diverged_fraction)
    nu = run.get("nu", 0.05)
    w.verdict("semigroup_stability", f"fraction >= {1 - nu}", frac,
              bool(frac >= 1 - nu))
    w.stage_done("semigroup")


def _exp_det_decay(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    q0 = _q0_from_run(run, params.dim)
    n = int(run.get("n", 2))
    batch = riccati.simulate_batch(params, q0, [run["T"]], run["dt"],
                                   run["n_paths"], run["seed"], track_e=True)
    dec = mc.det_decay_rate(batch, n, params, q0)
    w.row("empirical_rate", dec.rate, dec.rate_stderr,
          diverged=batch.diverged_fraction)
    w.row("bound", dec.bound)
    w.verdict("det_decay", "rate >= bound - 3 SE", dec.rate,
              bool(dec.rate >= dec.bound - 3 * dec.rate_stderr))
    w.stage_done("det-decay")


def _exp_dyson_compare(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    r = params.dim
    a, rr, ss, uu, vv = dyson.isotropic_coefficients(params)
    lam0 = np.asarray(run.get("lam0") or (np.linspace(2.0, 0.5, r)), dtype=float)
    q0 = np.diag(lam0)
    t = run["T"]
    batch = riccati.simulate_batch(params, q0, [t], run["dt"], run["n_paths"],
                                   run["seed"], purpose="dyson-compare:matrix")
    lam_mat = np.linalg.eigvalsh(batch.Q[:, -1])[:, ::-1]
    ep = dyson.simulate_isotropic_eigenvalues(
        a, rr, ss, uu, vv, r=r, eps=params.eps, t_final=t, dt=run["dt"],
        seed=run["seed"], lam0=lam0, n_paths=run["n_paths"], t_grid=[t])
    lam_sde = ep.lambdas[:, -1, :]
    threshold = run.get("threshold", 0.05)
    worst = 0.0
    for i in range(r):
        d = mc.ks_distance(lam_mat[:, i], lam_sde[:, i])
        worst = max(worst, d)
        w.row(f"ks_lambda_{i + 1}", d)
        w.series_point("ks_distances", i + 1, d)
    w.verdict("dyson_ks", f"max KS <= {threshold}", worst,
              bool(worst <= threshold))
    w.row("collision_events", ep.collision_events)
    w.stage_done("dyson-compare")


def _exp_enkf(cfg, w: ResultWriter):
    model: enkf.FilterModel = cfg.model["filter_model"]
    run = cfg.run
    n_part = int(run.get("N", 100))
    flavor = int(run.get("flavor", 2))
    t_grid = run.get("time_grid") or [1.0, run["T"]]
    n_runs = int(run.get("n_runs", 400))
    eps, _ = enkf.ensemble_eps(n_part)
    kappa = 1 if flavor == 1 else 0
    fr = enkf.run_filters(model, n_part, t_grid, run["dt"], n_runs,
                          run["seed"], flavor=flavor, exact_init=True)
    params = model.riccati_params(kappa=kappa, eps=eps)
    batch = riccati.simulate_batch(params, np.eye(model.dim), t_grid,
                                   run["dt"], max(2000, n_runs),
                                   run["seed"] + 1, purpose="enkf:riccati")
    ok_all = True
    for j, t in enumerate(fr.grid):
        tr_f = mc.traces(fr.P_hat[:, j])
        tr_r = mc.traces(batch.Q[:, j])
        for moment in (1, 2):
            mf, sf, _ = mc.batch_means(tr_f**moment)
            mr, sr, _ = mc.batch_means(tr_r**moment)
            gap = abs(mf - mr)
            lim = 3.0 * math.hypot(sf, sr)
            ok = gap <= lim
            ok_all = ok_all and ok
            w.row(f"t={t:g} m{moment} filter", mf, sf, n_paths=n_runs)
            w.row(f"t={t:g} m{moment} riccati", mr, sr,
                  n_paths=batch.Q.shape[0])
            w.verdict(f"corr_t{t:g}_m{moment}", "gap <= 3 combined SE", gap, ok)
    w.stage_done("enkf-correspondence")
    # Kalman consistency at large N
    fr2 = enkf.run_filters(model, 2000, [run["T"]], run["dt"], 20,
                           run["seed"] + 2, flavor=flavor, exact_init=True)
    _, flow = enkf.kalman_bucy(
        model, np.zeros((int(round(run["T"] / run["dt"])), model.obs_dim)),
        np.zeros(model.dim), np.eye(model.dim), run["dt"])
    gap = float(np.mean([np.linalg.norm(p - flow.P[-1], 2)
                         for p in fr2.P_hat[:, -1]]))
    lim = 5.0 / math.sqrt(2000)
    w.row("kalman_consistency_gap", gap, n_paths=20)
    w.verdict("kalman_consistency", f"mean gap <= {lim:.4g}", gap,
              bool(gap <= lim))
    w.stage_done("enkf-kalman")


def _exp_stationarity(cfg, w: ResultWriter):
    params = cfg.model["params"]
    run = cfg.run
    r = params.dim
    q0a = _q0_from_run(run, r)
    q0b = run.get("Q0_b")
    q0b = (np.asarray(q0b, dtype=float) if isinstance(q0b, list)
           else float(q0b or 5.0) * np.eye(r))
    grid = run.get("time_grid") or list(np.linspace(0.5, run["T"], 10))
    curve = mc.stationarity_diagnostic(params, q0a, q0b, grid,
                                       run["n_paths"], run["seed"],
                                       dt=run["dt"])
    for t, d, se in zip(curve.grid, curve.distances, curve.stderrs):
        w.row(f"t={t:g} W1", d, se)
        w.series_point("w1_distance", t, d, se)
    threshold = run.get("threshold", 0.05)
    w.verdict("terminal_distance", f"W1(T) <= {threshold}",
              curve.distances[-1], bool(curve.distances[-1] <= threshold))
    after = curve.grid >= 1.0
    dd = curve.distances[after]
    ss = curve.stderrs[after]
    monotone = all(dd[k + 1] <= dd[k] + 2 * math.hypot(ss[k], ss[k + 1])
                   for k in range(len(dd) - 1))
    w.row("fitted_rate", curve.rate)
    w.verdict("monotone_decay", "nonincreasing after t=1 (2 SE wiggle)",
              float(len(dd)), bool(monotone))
    w.stage_done("stationarity")


_RUNNERS = {
    "simulate": _exp_simulate,
    "moments": _exp_moments,
    "bias": _exp_bias,
    "fluctuation": _exp_fluctuation,
    "semigroup": _exp_semigroup,
    "det-decay": _exp_det_decay,
    "dyson-compare": _exp_dyson_compare,
    "enkf": _exp_enkf,
    "stationarity": _exp_stationarity,
}


def run_experiment(cfg: ExperimentConfig, outdir: Path) -> int:
    """Execute one experiment; returns the process exit code."""
    w = ResultWriter(outdir, cfg.experiment, cfg.run["n_paths"])
    try:
        _RUNNERS[cfg.experiment](cfg, w)
    except RiccdiffError as exc:
        w.flush(warnings=cfg.warnings + [f"numerical failure: {exc}"])
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    summary = w.flush(config_echo={"experiment": cfg.experiment,
                                   "run": {k: v for k, v in cfg.run.items()
                                           if isinstance(v, (int, float, str, list))}},
                      warnings=cfg.warnings)
    return 0 if summary["pass"] else 1


def report(directory: Path) -> int:
    """Print the verdict table for a completed result directory."""
    missing = [n for n in ("results.csv", "summary.json")
               if not (directory / n).exists()]
    if missing:
        print(f"error: {directory} is missing {', '.join(missing)}",
              file=sys.stderr)
        return 2
    with open(directory / "summary.json") as fh:
        summary = json.load(fh)
    print(f"experiment: {summary.get('experiment', '?')}")
    width = max([len(v['id']) for v in summary.get("verdicts", [])] + [10])
    all_ok = True
    for v in summary.get("verdicts", []):
        ok = v["pass"]
        all_ok = all_ok and ok
        measured = v["measured"]
        mtxt = f"{measured:.6g}" if isinstance(measured, (int, float)) else measured
        print(f"  {v['id']:<{width}}  target {v['target']:<28} "
              f"measured {mtxt:<12} {'PASS' if ok else 'FAIL'}")
    for warning in summary.get("warnings", []):
        print(f"  warning: {warning}")
    if not summary.get("verdicts"):
        print("  (no verdicts recorded)")
    return 0 if all_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="riccdiff",
        description="Riccati diffusion / EnKF experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    p = sub.add_parser("report", help="summarize a result directory")
    p.add_argument("directory", type=Path)
    args = parser.parse_args(argv)

    if args.command == "report":
        return report(args.directory)

    threads = args.threads
    if threads is None and os.environ.get("RICCDIFF_THREADS"):
        try:
            threads = int(os.environ["RICCDIFF_THREADS"])
        except ValueError:
            print("error: RICCDIFF_THREADS must be an integer", file=sys.stderr)
            return 2
    if threads is not None:
        set_threads(threads)

    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    if cfg.experiment != args.command:
        print(f"config error: config names experiment {cfg.experiment!r}, "
              f"but {args.command!r} was requested", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.run["seed"] = args.seed
    for warning in cfg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    outdir = args.out or Path(cfg.output.get("directory", "riccdiff-out"))
    return run_experiment(cfg, outdir)


if __name__ == "__main__":
    sys.exit(main())
