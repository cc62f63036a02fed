"""Monte Carlo estimation of moment norms, bias/fluctuation scaling curves,
Lyapunov exponents, determinant decay rates, and stationarity diagnostics,
with batch-means error bars throughout.

Statistical conventions: estimates carry a standard error from 20 batch
means by default; Loewner comparisons under sampling noise use the minimal
relaxation lam_min(B - mean) >= -k * SE(lam_min); expectations of semigroup
determinants are reduced in the log domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matcore, riccati
from .errors import InsufficientDataError, PreconditionViolatedError

Array = np.ndarray

DEFAULT_BATCHES = 20


# ---------------------------------------------------------------------------
# batched matrix functionals


def spectral_norms(mats: Array) -> Array:
    """Spectral norms of a stack of symmetric matrices."""
    w = np.linalg.eigvalsh(matcore.sym_part(mats))
    return np.abs(w).max(axis=-1)


def frobenius_norms(mats: Array) -> Array:
    return np.sqrt(np.sum(mats**2, axis=(-2, -1)))


def traces(mats: Array) -> Array:
    return np.trace(mats, axis1=-2, axis2=-1)


def lambda_stat(mats: Array) -> Array:
    """Lyapunov statistic ||Q||_2 + ||Q^{-1}||_2 per matrix; inf when the
    smallest eigenvalue is not positive."""
    w = np.linalg.eigvalsh(matcore.sym_part(mats))
    lo = w[..., 0]
    hi = np.abs(w).max(axis=-1)
    out = np.where(lo > 0, hi + 1.0 / np.where(lo > 0, lo, 1.0), np.inf)
    return out


def _batch_slices(n: int, n_batches: int) -> list[slice]:
    n_batches = max(1, min(n_batches, n))
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def batch_means(values: Array, n_batches: int = DEFAULT_BATCHES) -> tuple[float, float, Array]:
    """(mean, stderr-of-mean, batch means) combining values in index order."""
    values = np.asarray(values, dtype=float)
    sl = _batch_slices(len(values), n_batches)
    bm = np.array([values[s].mean() for s in sl])
    mean = float(values.mean())
    se = float(bm.std(ddof=1) / np.sqrt(len(bm))) if len(bm) > 1 else 0.0
    return mean, se, bm


def logmeanexp(x: Array) -> float:
    x = np.asarray(x, dtype=float)
    m = x.max()
    return float(m + np.log(np.mean(np.exp(x - m))))


# ---------------------------------------------------------------------------
# moment norms


@dataclass
class MomentEstimate:
    """(E[f(X)^n])^{1/n} with a delta-method batch-means standard error."""

    order_n: int
    value: float
    stderr: float
    n_paths: int
    batch_count: int
    diverged_fraction: float = 0.0

    @property
    def reliable(self) -> bool:
        return self.diverged_fraction <= 0.01


def estimate_moment_norm(sampler, functional, n: int, n_paths: int, seed: int,
                         n_batches: int = DEFAULT_BATCHES) -> MomentEstimate:
    """|||X|||_n for X = sampler output, f = functional (batched norm).

    ``sampler(n_paths, seed)`` must return (stack of matrices, diverged mask).
    Diverged paths are excluded from the estimate and reported.
    """
    if n_paths < 100:
        raise PreconditionViolatedError("need n_paths >= 100")
    mats, diverged = sampler(n_paths, seed)
    ok = ~np.asarray(diverged, dtype=bool)
    vals = np.asarray(functional(mats[ok]), dtype=float)
    if len(vals) < 2:
        raise InsufficientDataError("all paths diverged")
    powered = vals**n
    mean, se_mean, bm = batch_means(powered, n_batches)
    value = mean ** (1.0 / n)
    if mean > 0 and se_mean > 0:
        stderr = se_mean * value / (n * mean)
    else:
        stderr = 0.0
    return MomentEstimate(
        order_n=n, value=float(value), stderr=float(stderr),
        n_paths=int(ok.sum()), batch_count=len(bm),
        diverged_fraction=float(1.0 - ok.mean()),
    )


def riccati_terminal_sampler(params: riccati.ModelParams, q0: Array, t: float,
                             dt: float = riccati.DEFAULT_DT,
                             purpose: str = "moment"):
    """Sampler factory: terminal states of the forward diffusion."""

    def sampler(n_paths, seed):
        batch = riccati.simulate_batch(params, q0, [t], dt, n_paths, seed,
                                       purpose=purpose)
        return batch.Q[:, -1], batch.diverged

    return sampler


def inverse_terminal_sampler(params: riccati.ModelParams, q0: Array, t: float,
                             dt: float = riccati.DEFAULT_DT,
                             purpose: str = "moment-inverse"):
    def sampler(n_paths, seed):
        z, _, diverged = riccati.simulate_batch_inverse(
            params, q0, [t], dt, n_paths, seed, purpose=purpose)
        return z[:, -1], diverged

    return sampler


# ---------------------------------------------------------------------------
# scaling curves


@dataclass
class ScalingFit:
    """Least-squares log-log fit of responses against the noise level."""

    eps_grid: Array
    responses: Array
    response_stderrs: Array
    slope: float
    slope_stderr: float
    intercept: float
    extras: dict = field(default_factory=dict)


def _loglog_fit(eps_grid: Array, responses: Array) -> tuple[float, float, float]:
    x = np.log(np.asarray(eps_grid, dtype=float))
    y = np.log(np.asarray(responses, dtype=float))
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    dof = max(n - 2, 1)
    slope_se = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    return slope, slope_se, intercept


def euler_reference(params: riccati.ModelParams, q0: Array, t_grid,
                    dt: float) -> Array:
    """Deterministic flow under the same Euler stepper and dt as the
    stochastic paths (so discretization bias cancels in differences)."""
    batch = riccati.simulate_batch(params.with_eps(0.0), q0, t_grid, dt, 1, 0,
                                   purpose="euler-ref")
    return batch.Q[0]


def bias_curve(params: riccati.ModelParams, q0: Array, t: float, eps_grid,
               n_paths: int, seed: int, dt: float = riccati.DEFAULT_DT,
               n_batches: int = DEFAULT_BATCHES) -> ScalingFit:
    """Bias response ||phi_t(Q0) - mean(Q_t^eps)||_2 over a noise grid, with
    its log-log slope (theory: 2) and per-point Loewner slack
    lam_min(phi_t - mean) with a batch-means SE."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if len(eps_grid) < 4:
        raise PreconditionViolatedError("eps grid needs at least 4 points")
    ref = euler_reference(params, q0, [t], dt)[-1]
    responses, stderrs, lam_mins, lam_ses, divfracs = [], [], [], [], []
    floor_rates = []
    for i, eps in enumerate(eps_grid):
        batch = riccati.simulate_batch(params.with_eps(eps), q0, [t], dt,
                                       n_paths, seed, purpose=f"bias:{i}")
        floor_rates.append(batch.floor_rate)
        mats = batch.Q[:, -1]
        mean_mat = mats.mean(axis=0)
        responses.append(np.linalg.norm(ref - mean_mat, 2))
        sl = _batch_slices(n_paths, n_batches)
        resp_b = [np.linalg.norm(ref - mats[s].mean(axis=0), 2) for s in sl]
        stderrs.append(np.std(resp_b, ddof=1) / np.sqrt(len(resp_b)))
        lam_b = [matcore.min_eig(ref - mats[s].mean(axis=0)) for s in sl]
        lam_mins.append(matcore.min_eig(ref - mean_mat))
        lam_ses.append(np.std(lam_b, ddof=1) / np.sqrt(len(lam_b)))
        divfracs.append(batch.diverged_fraction)
    responses = np.array(responses)
    stderrs = np.array(stderrs)
    # grid points where MC noise swamps the signal cannot inform the fit;
    # they are reported and dropped when enough points remain
    noise_limited = responses <= 2.0 * stderrs
    usable = ~noise_limited
    if noise_limited.any() and usable.sum() >= 3:
        slope, slope_se, intercept = _loglog_fit(eps_grid[usable],
                                                 responses[usable])
    else:
        if noise_limited.any():
            warnings.warn("bias responses are noise-limited; widen n_paths")
        slope, slope_se, intercept = _loglog_fit(eps_grid, responses)
    return ScalingFit(
        eps_grid=eps_grid, responses=responses,
        response_stderrs=stderrs, slope=slope,
        slope_stderr=slope_se, intercept=intercept,
        extras={
            "lam_min": np.array(lam_mins),
            "lam_min_stderr": np.array(lam_ses),
            "diverged_fraction": np.array(divfracs),
            "noise_limited": noise_limited,
            "floor_rate": np.array(floor_rates),
            "t": t, "dt": dt, "n_paths": n_paths,
        },
    )


def fluctuation_curve(params: riccati.ModelParams, q0: Array, t: float,
                      n: int, eps_grid, n_paths: int, seed: int,
                      dt: float = riccati.DEFAULT_DT,
                      n_batches: int = DEFAULT_BATCHES) -> ScalingFit:
    """Fluctuation response |||Q_t^eps - phi_t(Q0)|||_n over a noise grid,
    with its log-log slope (theory: 1)."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if len(eps_grid) < 4:
        raise PreconditionViolatedError("eps grid needs at least 4 points")
    ref = euler_reference(params, q0, [t], dt)[-1]
    responses, stderrs, divfracs, floor_rates = [], [], [], []
    for i, eps in enumerate(eps_grid):
        batch = riccati.simulate_batch(params.with_eps(eps), q0, [t], dt,
                                       n_paths, seed, purpose=f"fluct:{i}")
        est = _norm_moment_of_diff(batch.Q[:, -1], ref, n, n_batches)
        responses.append(est[0])
        stderrs.append(est[1])
        divfracs.append(batch.diverged_fraction)
        floor_rates.append(batch.floor_rate)
    slope, slope_se, intercept = _loglog_fit(eps_grid, responses)
    return ScalingFit(
        eps_grid=eps_grid, responses=np.array(responses),
        response_stderrs=np.array(stderrs), slope=slope,
        slope_stderr=slope_se, intercept=intercept,
        extras={"diverged_fraction": np.array(divfracs),
                "floor_rate": np.array(floor_rates),
                "t": t, "dt": dt, "n": n, "n_paths": n_paths},
    )


def _norm_moment_of_diff(mats: Array, ref: Array, n: int,
                         n_batches: int) -> tuple[float, float]:
    vals = spectral_norms(mats - ref) ** n
    mean, se_mean, _ = batch_means(vals, n_batches)
    value = mean ** (1.0 / n)
    stderr = se_mean * value / (n * mean) if mean > 0 else 0.0
    return float(value), float(stderr)


def fluctuation_time_profile(params: riccati.ModelParams, q0: Array, times,
                             n: int, n_paths: int, seed: int,
                             dt: float = riccati.DEFAULT_DT) -> dict[float, float]:
    """Fluctuation response at several horizons from one simulation (checks
    time-uniformity of the estimates)."""
    times = np.asarray(times, dtype=float)
    ref = euler_reference(params, q0, times, dt)
    batch = riccati.simulate_batch(params, q0, times, dt, n_paths, seed,
                                   purpose="fluct-profile")
    out = {}
    for j, t in enumerate(times):
        val, _ = _norm_moment_of_diff(batch.Q[:, j], ref[j], n, DEFAULT_BATCHES)
        out[float(t)] = val
    return out


# ---------------------------------------------------------------------------
# semigroup statistics


@dataclass
class LyapunovStats:
    t: float
    exponents: Array
    trace_exponents: Array | None

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict[float, float]:
        return {float(q): float(np.quantile(self.exponents, q)) for q in qs}

    def fraction_below(self, threshold: float) -> float:
        return float(np.mean(self.exponents < threshold))


def lyapunov_exponent(batch: riccati.SimBatch) -> LyapunovStats:
    """Per-path exponents (1/t) log ||E_t||_2 at the largest recorded time,
    plus the trace version (1/t) int Tr(A - Q_s S) ds."""
    if batch.E is None:
        raise PreconditionViolatedError("batch was simulated without track_e")
    t = float(batch.t_grid[-1])
    e_T = batch.E[:, -1]
    norms = np.linalg.norm(e_T, 2, axis=(-2, -1))
    exps = np.log(np.maximum(norms, 1e-300)) / t
    tr_exps = batch.logdet[:, -1] / t
    return LyapunovStats(t=t, exponents=exps, trace_exponents=tr_exps)


@dataclass
class DetDecay:
    rate: float
    rate_stderr: float
    bound: float
    t: float
    n: int


def det_decay_rate(batch: riccati.SimBatch, n: int,
                   params: riccati.ModelParams, q0: Array | None = None,
                   n_batches: int = DEFAULT_BATCHES) -> DetDecay:
    """Empirical decay rate -(1/(t n)) log E[det(E_t)^n] against the bound
    sqrt(Tr(R^eps_n S^eps_n)); log-sum-exp reduction avoids underflow."""
    if batch.E is None:
        raise PreconditionViolatedError("batch was simulated without track_e")
    thr = riccati.thresholds(params, n)
    if matcore.min_eig(thr.R_eps_n) <= 0 or matcore.min_eig(thr.S_eps_n) <= 0:
        raise PreconditionViolatedError(
            "R^eps_n and S^eps_n must be SPD for the determinant-decay bound")
    bound = math.sqrt(float(np.trace(thr.R_eps_n @ thr.S_eps_n)))
    t = float(batch.t_grid[-1])
    # per-path log det(E_t) from the matrix route; Liouville ties it to the
    # quadrature route, so either is valid here
    sign, logabs = np.linalg.slogdet(batch.E[:, -1])
    if np.any(sign <= 0):
        raise PreconditionViolatedError("semigroup determinant lost positivity")
    x = n * logabs
    rate = -logmeanexp(x) / (n * t)
    sl = _batch_slices(len(x), n_batches)
    rates_b = np.array([-logmeanexp(x[s]) / (n * t) for s in sl])
    se = float(rates_b.std(ddof=1) / np.sqrt(len(rates_b))) if len(rates_b) > 1 else 0.0
    return DetDecay(rate=float(rate), rate_stderr=se, bound=bound, t=t, n=n)


# ---------------------------------------------------------------------------
# stationarity / coupling


def wasserstein1(a: Array, b: Array) -> float:
    """Quantile-coupling estimator of the 1-Wasserstein distance."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    k = min(len(a), len(b))
    qs = (np.arange(k) + 0.5) / k
    return float(np.mean(np.abs(np.quantile(a, qs) - np.quantile(b, qs))))


@dataclass
class StationarityCurve:
    grid: Array
    distances: Array
    stderrs: Array
    rate: float
    excluded_fraction: float


def stationarity_diagnostic(params: riccati.ModelParams, q0_a: Array,
                            q0_b: Array, t_grid, n_paths: int, seed: int,
                            dt: float = riccati.DEFAULT_DT,
                            n_batches: int = DEFAULT_BATCHES) -> StationarityCurve:
    """W1 distance between the laws of Lambda(Q_t) = ||Q_t||_2 + ||Q_t^{-1}||_2
    started from two initializations, with a fitted exponential decay rate.

    The coupling must contract when eps is below the first-moment
    thresholds; paths whose state lost strict positivity are excluded and
    reported.
    """
    thr = riccati.thresholds(params, 1)
    lim = min(thr.eps_n_V, thr.eps_n_UV)
    if params.eps > lim + 1e-12:
        raise PreconditionViolatedError(
            f"stationarity diagnostic needs eps <= {lim:.6g}")
    ba = riccati.simulate_batch(params, q0_a, t_grid, dt, n_paths, seed,
                                purpose="stationarity:a")
    bb = riccati.simulate_batch(params, q0_b, t_grid, dt, n_paths, seed,
                                purpose="stationarity:b")
    la = lambda_stat(ba.Q)
    lb = lambda_stat(bb.Q)
    n_rec = la.shape[1]
    dists = np.empty(n_rec)
    ses = np.empty(n_rec)
    excluded = 0.0
    for j in range(n_rec):
        xa = la[:, j][np.isfinite(la[:, j])]
        xb = lb[:, j][np.isfinite(lb[:, j])]
        excluded = max(excluded, 1.0 - min(len(xa), len(xb)) / n_paths)
        dists[j] = wasserstein1(xa, xb)
        sa = _batch_slices(len(xa), n_batches)
        sb = _batch_slices(len(xb), n_batches)
        db = [wasserstein1(xa[si], xb[sj]) for si, sj in zip(sa, sb)]
        ses[j] = np.std(db, ddof=1) / np.sqrt(len(db)) if len(db) > 1 else 0.0
    grid = np.asarray(ba.t_grid, dtype=float)
    mask = (grid >= 1.0) & (dists > 0)
    if mask.sum() >= 2:
        z = np.polyfit(grid[mask], np.log(dists[mask]), 1)
        rate = float(-z[0])
    else:
        rate = math.nan
    return StationarityCurve(grid=grid, distances=dists, stderrs=ses,
                             rate=rate, excluded_fraction=float(excluded))


# ---------------------------------------------------------------------------
# Loewner comparison under sampling noise


def loewner_min_slack(target: Array, sample_mats: Array,
                      n_batches: int = DEFAULT_BATCHES) -> tuple[float, float]:
    """lam_min(target - mean(sample)) with a batch-means standard error;
    'target dominates up to k SE' means the value is >= -k * SE."""
    mean_mat = sample_mats.mean(axis=0)
    lam = matcore.min_eig(target - mean_mat)
    sl = _batch_slices(sample_mats.shape[0], n_batches)
    lam_b = [matcore.min_eig(target - sample_mats[s].mean(axis=0)) for s in sl]
    se = float(np.std(lam_b, ddof=1) / np.sqrt(len(lam_b))) if len(lam_b) > 1 else 0.0
    return float(lam), se


def ks_distance(a: Array, b: Array) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    from scipy.stats import ks_2samp

    return float(ks_2samp(np.asarray(a), np.asarray(b), method="asymp").statistic)
