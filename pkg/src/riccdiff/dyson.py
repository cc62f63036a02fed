"""Eigenvalue dynamics of the matrix Riccati diffusion.

In the isotropic case (all coefficient matrices proportional to the
identity) the ordered eigenvalues follow an autonomous interacting SDE with
a Coulomb-type repulsion of strength eps^2/4; in general the drift involves
eigenvector-projected coefficients.  This module simulates the isotropic
system directly and regresses observed eigenvalue increments of a matrix
path against the theoretical drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._rng import stream_key
from .errors import (
    CollisionFailureError,
    InsufficientDataError,
    PreconditionViolatedError,
)
from .riccati import ModelParams, RiccatiPath

Array = np.ndarray


@dataclass
class EigenPath:
    """Ordered-eigenvalue trajectories; collision_events counts rejected
    step attempts across all paths."""

    grid: Array
    lambdas: Array  # (n_paths, n_rec, r), sorted descending
    collision_events: int
    failed: Array  # (n_paths,) step index of collision failure, 0 if none
    seed: int
    dt: float


def isotropic_coefficients(params: ModelParams) -> tuple[float, float, float, float, float]:
    """(a, r, s, u, v) scalars for an identity-proportional model."""
    r = params.dim

    def coef(m, name):
        c = m[0, 0]
        if not np.allclose(m, c * np.eye(r), atol=1e-12 * (1 + abs(c))):
            raise PreconditionViolatedError(f"{name} is not identity-proportional")
        return float(c)

    return (
        coef(params.A, "A"),
        coef(params.R, "R"),
        coef(params.S, "S"),
        coef(params.U, "U"),
        coef(params.V, "V"),
    )


def simulate_isotropic_eigenvalues(
    a: float,
    rr: float,
    ss: float,
    uu: float,
    vv: float,
    r: int,
    eps: float,
    t_final: float,
    dt: float,
    seed: int,
    lam0: Array | None = None,
    n_paths: int = 1,
    t_grid=None,
    max_halvings: int = 6,
    path_offset: int = 0,
    purpose: str = "dyson",
) -> EigenPath:
    """Euler-Maruyama on the interacting eigenvalue SDE
    d l_i = [2 a l_i + rr - ss l_i^2 + (eps^2/4) sum_{j!=i}
    (l_i sig(l_j) + l_j sig(l_i)) / (l_i - l_j)] dt
    + eps sqrt(l_i sig(l_i)) dW_i,  sig(l) = uu + vv l^2.

    A step that breaks strict ordering or positivity is rejected and retried
    at half the step (fresh increments), up to ``max_halvings`` levels.
    """
    if ss <= 0 or rr <= 0:
        raise PreconditionViolatedError("need rr > 0 and ss > 0")
    if eps > 2.0 / np.sqrt(r + 1) + 1e-12 and vv > 0:
        raise PreconditionViolatedError("eps above 2/sqrt(r+1)")
    if lam0 is None:
        # spread around the scalar fixed point, strictly ordered
        fix = (a + np.sqrt(a * a + rr * ss)) / ss
        lam0 = fix * (1.0 + 0.5 * np.linspace(1, -1, r))
    lam0 = np.asarray(lam0, dtype=float)
    if lam0.shape != (r,):
        raise PreconditionViolatedError("lam0 must have length r")
    if r > 1 and np.any(np.diff(lam0) >= 0):
        raise PreconditionViolatedError("lam0 must be strictly decreasing")
    if lam0[-1] <= 0:
        raise PreconditionViolatedError("lam0 must be positive")
    n_steps = max(1, int(round(t_final / dt)))
    if t_grid is None:
        rec = np.arange(1, n_steps + 1, dtype=np.int64)
    else:
        rec = np.round(np.atleast_1d(np.asarray(t_grid)) / dt).astype(np.int64)
    key = stream_key(seed, purpose)
    out_lam = np.empty((n_paths, len(rec), r))
    out_fail = np.zeros(n_paths, dtype=np.int64)
    out_retries = np.zeros(n_paths, dtype=np.int64)
    _kernels.dyson_kernel(
        lam0, a, rr, ss, uu, vv, eps, dt, n_steps, rec, key, path_offset,
        n_paths, max_halvings, out_lam, out_fail, out_retries,
    )
    if n_paths == 1 and out_fail[0] > 0:
        raise CollisionFailureError(
            f"ordering lost at step {out_fail[0]} despite {max_halvings} halvings"
        )
    return EigenPath(
        grid=rec * dt,
        lambdas=out_lam,
        collision_events=int(out_retries.sum()),
        failed=out_fail,
        seed=seed,
        dt=dt,
    )


@dataclass
class DriftRegression:
    slope: float
    slope_stderr: float
    intercept: float
    intercept_stderr: float
    n_used: int
    n_skipped: int


def dyson_drift(lams: Array, proj: dict[str, Array], eps: float) -> Array:
    """Theoretical instantaneous drift for each eigenvalue given projected
    coefficients proj[H][i] = q_i' H q_i for H in {A, R, S, U, V}."""
    r = lams.shape[-1]
    a_p, r_p, s_p = proj["A"], proj["R"], proj["S"]
    u_p, v_p = proj["U"], proj["V"]
    theta = 2.0 * a_p * lams + r_p - lams**2 * s_p
    rep = np.zeros_like(lams)
    g = u_p + lams**2 * v_p
    for i in range(r):
        for j in range(r):
            if j == i:
                continue
            rep[..., i] += (lams[..., i] * g[..., j] + lams[..., j] * g[..., i]) / (
                lams[..., i] - lams[..., j]
            )
    return theta + eps**2 / 4.0 * rep


def _path_drift_pairs(path: RiccatiPath, params: ModelParams,
                      gap_tol: float | None) -> tuple[Array, Array, int]:
    q = path.Q
    m = q.shape[0] - 1
    w, v = np.linalg.eigh(q)  # ascending
    w = w[:, ::-1]
    v = v[:, :, ::-1]
    # column sign alignment across steps for continuity (cosmetic for the
    # projections, which are sign-invariant)
    for k in range(1, v.shape[0]):
        s = np.sign(np.sum(v[k] * v[k - 1], axis=0))
        s[s == 0] = 1.0
        v[k] *= s
    # projected coefficients H_{k,i} = q_{k,i}' H q_{k,i}
    proj = {}
    for name, mat in (("A", params.A), ("R", params.R), ("S", params.S),
                      ("U", params.U), ("V", params.V)):
        proj[name] = np.einsum("kri,rs,ksi->ki", v, mat, v)
    lams = w
    drift = dyson_drift(lams[:-1], {k: p[:-1] for k, p in proj.items()},
                        params.eps)
    observed = (lams[1:] - lams[:-1]) / (path.grid[1:] - path.grid[:-1])[:, None]
    if params.dim > 1:
        gaps = np.min(np.abs(np.diff(lams[:-1], axis=1)), axis=1)
    else:
        gaps = np.full(m, np.inf)
    if gap_tol is None:
        # the one-step Hadamard expansion needs the gap to dominate the
        # per-step eigenvalue noise eps sqrt(lam sig(lam) dt); below that the
        # repulsion prediction is pure leverage
        g = proj["U"][:-1] + lams[:-1] ** 2 * proj["V"][:-1]
        dts = (path.grid[1:] - path.grid[:-1])[:, None]
        noise = params.eps * np.sqrt(np.maximum(lams[:-1] * g, 0.0) * dts)
        tol = np.maximum(1e-6, 12.0 * noise.max(axis=1))
    else:
        tol = np.full(m, gap_tol)
    keep = gaps > tol
    return drift[keep].ravel(), observed[keep].ravel(), int(m - keep.sum())


def eigen_drift_diagnostic(paths: RiccatiPath | list[RiccatiPath],
                           params: ModelParams,
                           gap_tol: float | None = None) -> DriftRegression:
    """Regress observed eigenvalue increments of one or more matrix paths on
    the theoretical Dyson drift evaluated along the same paths.

    Steps with a near-degenerate spectrum are skipped (the drift is singular
    there).  ``gap_tol=None`` uses a noise-aware cutoff with an absolute
    floor of 1e-6; pass a float to fix it.  Slope near one validates the
    eigenvalue equation.
    """
    if isinstance(paths, RiccatiPath):
        paths = [paths]
    xs, ys, skipped = [], [], 0
    for path in paths:
        if path.Q_packed.shape[0] - 1 < 10:
            raise InsufficientDataError("need at least 10 recorded steps")
        xi, yi, sk = _path_drift_pairs(path, params, gap_tol)
        xs.append(xi)
        ys.append(yi)
        skipped += sk
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    n = len(x)
    if n < 10:
        raise InsufficientDataError("too few non-degenerate samples")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    s2 = float(np.sum(resid**2) / max(n - 2, 1))
    slope_se = float(np.sqrt(s2 / sxx))
    intercept_se = float(np.sqrt(s2 * (1.0 / n + xm**2 / sxx)))
    return DriftRegression(
        slope=slope,
        slope_stderr=slope_se,
        intercept=intercept,
        intercept_stderr=intercept_se,
        n_used=n,
        n_skipped=skipped,
    )
