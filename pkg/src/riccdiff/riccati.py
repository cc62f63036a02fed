"""Matrix Riccati flows: the deterministic equation and its fixed point, the
stochastic diffusion in matrix and half-vectorized form, the inverse flow,
the stochastic exponential semigroup with its log-determinant accumulator,
and the closed-form thresholds and scalar comparison bounds.

Model
-----
State Q evolves by  dQ = Theta(Q) dt + eps [Q^{1/2} dW Sigma^{1/2}(Q)]_sym
with drift Theta(P) = A P + P A' + R - P S P and diffusion map
Sigma_{kappa,varpi}(P) = R + kappa (P + varpi I) S (P + varpi I).
The semigroup E_t solves dE = (A - Q_t S) E, E_0 = I, and satisfies
log det E_t = int_0^t Tr(A - Q_s S) ds, which every simulated path carries
as a cross-check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, matcore
from ._rng import stream_key
from .errors import (
    DimensionMismatchError,
    NotPositiveSemidefiniteError,
    PreconditionViolatedError,
    SolverFailureError,
    StepSizeTooLargeError,
)

Array = np.ndarray

DEFAULT_DT = 1e-3
ACCEPTANCE_DT = 2.5e-4
BLOWUP_GUARD = 1e8


# ---------------------------------------------------------------------------
# model parameters


def _as_psd(m: Array, name: str) -> Array:
    m = matcore.SymMat.from_full(np.asarray(m, dtype=float)).full()
    if matcore.min_eig(m) < -matcore.psd_tol(m):
        raise NotPositiveSemidefiniteError(f"{name} must be PSD")
    return m


def _pbh_rank_ok(blocks_fn, a: Array, tol: float) -> bool:
    r = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if lam.real < -1e-12:
            continue
        m = blocks_fn(lam)
        if np.linalg.matrix_rank(m, tol=tol) < r:
            return False
    return True


@dataclass(frozen=True)
class ModelParams:
    """One Riccati diffusion instance: (A, R, S, kappa, varpi, eps) plus the
    derived envelope pair (U, V) = (R + kappa varpi S(S + varpi I),
    kappa (S + varpi I))."""

    A: Array
    R: Array
    S: Array
    kappa: int = 1
    varpi: float = 0.0
    eps: float = 0.0
    U: Array = field(init=False, repr=False)
    V: Array = field(init=False, repr=False)
    stabilizable: bool = field(init=False)
    detectable: bool = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatchError("A must be square")
        r = a.shape[0]
        rm = _as_psd(self.R, "R")
        sm = _as_psd(self.S, "S")
        if rm.shape != (r, r) or sm.shape != (r, r):
            raise DimensionMismatchError("A, R, S must share a dimension")
        if self.kappa not in (0, 1):
            raise PreconditionViolatedError("kappa must be 0 or 1")
        if self.varpi < 0 or self.eps < 0:
            raise PreconditionViolatedError("varpi and eps must be nonnegative")
        object.__setattr__(self, "A", a.copy())
        object.__setattr__(self, "R", rm)
        object.__setattr__(self, "S", sm)
        eye = np.eye(r)
        u = rm + self.kappa * self.varpi * sm @ (sm + self.varpi * eye)
        v = self.kappa * (sm + self.varpi * eye)
        object.__setattr__(self, "U", matcore.sym_part(u))
        object.__setattr__(self, "V", matcore.sym_part(v))
        tol = 1e-8 * max(np.linalg.norm(a, 2), 1.0)
        b = matcore.sqrt_psd(rm)
        c = matcore.sqrt_psd(sm)
        stab = _pbh_rank_ok(lambda lam: np.hstack([a - lam * eye, b]), a, tol)
        det = _pbh_rank_ok(lambda lam: np.vstack([a - lam * eye, c]), a, tol)
        object.__setattr__(self, "stabilizable", stab)
        object.__setattr__(self, "detectable", det)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def with_eps(self, eps: float) -> "ModelParams":
        return replace(self, eps=float(eps))


def scalar_params(a: float, rr: float, ss: float, kappa: int = 1,
                  varpi: float = 0.0, eps: float = 0.0) -> ModelParams:
    """One-dimensional model convenience constructor."""
    return ModelParams(
        A=np.array([[a]]), R=np.array([[rr]]), S=np.array([[ss]]),
        kappa=kappa, varpi=varpi, eps=eps,
    )


# ---------------------------------------------------------------------------
# drift, diffusion map, envelope


def drift_theta(p: Array, params: ModelParams) -> Array:
    """Riccati drift A P + P A' + R - P S P (exactly symmetrized)."""
    p = np.asarray(p, dtype=float)
    if p.shape != params.A.shape:
        raise DimensionMismatchError("state and model dimensions differ")
    a = params.A
    out = a @ p + p @ a.T + params.R - p @ params.S @ p
    return matcore.sym_part(out)


def sigma_map(p: Array, params: ModelParams) -> Array:
    """Diffusion map R + kappa (P + varpi I) S (P + varpi I); PSD for PSD P."""
    p = np.asarray(p, dtype=float)
    if p.shape != params.A.shape:
        raise DimensionMismatchError("state and model dimensions differ")
    if matcore.min_eig(p) < -matcore.psd_tol(p):
        raise NotPositiveSemidefiniteError("sigma_map needs PSD input")
    if params.kappa == 0:
        return params.R.copy()
    shift = p + params.varpi * np.eye(params.dim)
    return matcore.sym_part(params.R + shift @ params.S @ shift)


def uv_bound(params: ModelParams) -> tuple[Array, Array]:
    """Envelope (U, V) with Sigma_{kappa,varpi}(P) <= U + P V P (Loewner)."""
    return params.U.copy(), params.V.copy()


# ---------------------------------------------------------------------------
# thresholds


def _psd_cap(base: Array, inc: Array) -> float:
    """sup{c >= 0 : base - c*inc is PSD} for PSD base, inc."""
    w, v = np.linalg.eigh(matcore.sym_part(base))
    scale = max(w.max(initial=0.0), 0.0)
    tol = 1e-12 * (1.0 + scale)
    pos = w > tol
    inc_scale = 1.0 + np.abs(inc).max(initial=0.0)
    if not pos.any():
        # base == 0: any nonzero inc forbids c > 0
        return math.inf if np.abs(inc).max(initial=0.0) <= 1e-14 * inc_scale else 0.0
    null = v[:, ~pos]
    if null.size and np.abs(inc @ null).max(initial=0.0) > 1e-10 * inc_scale:
        return 0.0
    vp = v[:, pos]
    d = 1.0 / np.sqrt(w[pos])
    proj = (vp * d).T @ inc @ (vp * d)
    lam = np.linalg.eigvalsh(matcore.sym_part(proj))[-1]
    if lam <= 1e-14:
        return math.inf
    return float(1.0 / lam)


@dataclass(frozen=True)
class Thresholds:
    """Closed-form noise-level thresholds for a model at one moment order n.

    Infinite thresholds are represented by ``math.inf``; ``degenerate`` flags
    a zero threshold caused by a rank-deficient R or S."""

    n: int
    eps0: float
    eps_n_V: float
    eps_n_UV: float
    R_eps: Array
    S_eps: Array
    R_eps_n: Array
    S_eps_n: Array
    degenerate: bool


def thresholds(params: ModelParams, n: int = 1) -> Thresholds:
    if n < 1:
        raise PreconditionViolatedError("n must be >= 1")
    r = params.dim
    u, v = params.U, params.V
    cap = min(_psd_cap(params.R, u), _psd_cap(params.S, v))
    eps0 = math.inf if math.isinf(cap) else math.sqrt(4.0 * cap / (r + 1))

    lam1_v = float(np.linalg.eigvalsh(v)[-1])
    lamr_s = float(np.linalg.eigvalsh(params.S)[0])
    if lamr_s <= 0.0:
        eps_n_v = 0.0
    elif n == 1 or lam1_v <= 0.0:
        eps_n_v = math.inf
    else:
        eps_n_v = math.sqrt(2.0 * lamr_s / (r * (n - 1) * lam1_v))

    lam1_u = float(np.linalg.eigvalsh(u)[-1])
    lamr_r = float(np.linalg.eigvalsh(params.R)[0])
    coef = (1.0 + n * r) * lam1_u + r * lam1_v / 4.0
    if lamr_r <= 0.0:
        eps_n_uv = 0.0
    elif coef <= 0.0:
        eps_n_uv = eps0
    else:
        eps_n_uv = min(eps0, math.sqrt(2.0 * lamr_r / coef))

    e2 = params.eps**2
    r_eps = params.R - (e2 / 4.0) * (r + 1) * u
    s_eps = params.S - (e2 / 4.0) * (r + 1) * v
    r_eps_n = r_eps - n * (e2 / 2.0) * u
    s_eps_n = s_eps - n * (e2 / 2.0) * v
    return Thresholds(
        n=n,
        eps0=eps0,
        eps_n_V=eps_n_v,
        eps_n_UV=eps_n_uv,
        R_eps=r_eps,
        S_eps=s_eps,
        R_eps_n=r_eps_n,
        S_eps_n=s_eps_n,
        degenerate=(eps0 == 0.0 or eps_n_v == 0.0 or eps_n_uv == 0.0),
    )


# ---------------------------------------------------------------------------
# fixed point


def _lyap_solve(f: Array, c: Array) -> Array:
    """Solve F X + X F' + C = 0 via the Kronecker linear system."""
    r = f.shape[0]
    eye = np.eye(r)
    lhs = np.kron(eye, f) + np.kron(f, eye)
    x = np.linalg.solve(lhs, -c.reshape(-1))
    return matcore.sym_part(x.reshape(r, r))


def _stabilizing_start(params: ModelParams, t_chunk: float = 2.0,
                       max_chunks: int = 100) -> Array:
    """Run the deterministic flow from I until A - P S is stable; the flow of
    a detectable/stabilizable model enters the stabilizing set in finite
    time."""
    p = np.eye(params.dim)
    for _ in range(max_chunks):
        if matcore.spectral_abscissa(params.A - p @ params.S) < -1e-9:
            return p
        flow = integrate_det_flow(p, t_chunk, min(1e-2, t_chunk / 10), params,
                                  record_stride=10**9)
        p = flow.P[-1]
    raise SolverFailureError("could not reach the stabilizing set")


def care_residual(p: Array, params: ModelParams) -> float:
    return float(np.linalg.norm(drift_theta(p, params), "fro"))


def solve_fixed_point(params: ModelParams, method: str = "newton",
                      max_iter: int = 100) -> Array:
    """Unique PSD fixed point of the drift with A - P S stable.

    ``newton`` runs Newton-Kleinman from a flow-generated stabilizing start;
    ``schur`` delegates to the Hamiltonian/Schur solver in SciPy.  The two
    routes cross-validate each other in the acceptance suite.
    """
    if not (params.stabilizable and params.detectable):
        raise PreconditionViolatedError(
            "fixed point needs (A, R^1/2) stabilizable and (A, S^1/2) detectable"
        )
    if method == "schur":
        from scipy.linalg import solve_continuous_are

        s_half = matcore.sqrt_psd(params.S)
        try:
            p = solve_continuous_are(params.A.T, s_half, params.R,
                                     np.eye(params.dim))
        except Exception as exc:  # scipy raises LinAlgError/ValueError
            raise SolverFailureError(f"Schur CARE solver failed: {exc}") from exc
        p = matcore.sym_part(p)
    elif method == "newton":
        p = _stabilizing_start(params)
        target = 1e-12
        for _ in range(max_iter):
            f = params.A - p @ params.S
            p_next = _lyap_solve(f, params.R + p @ params.S @ p)
            p = p_next
            if care_residual(p, params) <= target * (1.0 + np.linalg.norm(p) ** 2):
                break
        else:
            if care_residual(p, params) > 1e-10 * (1.0 + np.linalg.norm(p) ** 2):
                raise SolverFailureError("Newton-Kleinman did not converge")
    else:
        raise ValueError(f"unknown method {method!r}")
    p = matcore.psd_floor(p, tol=1e-8 * (1.0 + np.linalg.norm(p, 2)))
    if care_residual(p, params) > 1e-10 * (1.0 + np.linalg.norm(p) ** 2):
        raise SolverFailureError("fixed-point residual above tolerance")
    if matcore.spectral_abscissa(params.A - p @ params.S) >= 0:
        raise SolverFailureError("fixed point is not stabilizing")
    return p


# ---------------------------------------------------------------------------
# deterministic flow with semigroup and log-determinant accumulator


@dataclass
class DetFlow:
    """Deterministic Riccati flow record: P_t, semigroup E_t, and the running
    integral of Tr(A - P_s S)."""

    grid: Array
    P: Array
    E: Array
    logdet: Array


def integrate_det_flow(q0: Array, t_final: float, dt: float,
                       params: ModelParams, record_stride: int = 1) -> DetFlow:
    """Classic RK4 on the coupled (P, E, logdet) system."""
    if dt <= 0 or t_final < 0:
        raise PreconditionViolatedError("need dt > 0 and T >= 0")
    q0 = matcore.sym_part(np.asarray(q0, dtype=float))
    if matcore.min_eig(q0) < -matcore.psd_tol(q0):
        raise NotPositiveSemidefiniteError("Q0 must be PSD")
    r = params.dim
    n_steps = max(1, int(round(t_final / dt))) if t_final > 0 else 0
    dt_eff = t_final / n_steps if n_steps else dt
    a, s = params.A, params.S

    def deriv(p, e):
        f = a - p @ s
        return drift_theta(p, params), f @ e, float(np.trace(f))

    p = q0.copy()
    e = np.eye(r)
    ld = 0.0
    grid = [0.0]
    ps = [p.copy()]
    es = [e.copy()]
    lds = [0.0]
    for k in range(n_steps):
        k1p, k1e, k1l = deriv(p, e)
        k2p, k2e, k2l = deriv(p + 0.5 * dt_eff * k1p, e + 0.5 * dt_eff * k1e)
        k3p, k3e, k3l = deriv(p + 0.5 * dt_eff * k2p, e + 0.5 * dt_eff * k2e)
        k4p, k4e, k4l = deriv(p + dt_eff * k3p, e + dt_eff * k3e)
        p = matcore.sym_part(p + dt_eff / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p))
        e = e + dt_eff / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e)
        ld += dt_eff / 6.0 * (k1l + 2 * k2l + 2 * k3l + k4l)
        if matcore.min_eig(p) < -matcore.psd_tol(p):
            raise StepSizeTooLargeError(
                f"flow left the PSD cone at t={((k + 1) * dt_eff):.6g}; reduce dt"
            )
        if (k + 1) % record_stride == 0 or k + 1 == n_steps:
            grid.append((k + 1) * dt_eff)
            ps.append(p.copy())
            es.append(e.copy())
            lds.append(ld)
    return DetFlow(np.array(grid), np.array(ps), np.array(es), np.array(lds))


def comparison_upper_bound(phi_s_q1: Array, q2: Array, s: float, t: float,
                           params: ModelParams, dt: float = DEFAULT_DT) -> Array:
    """Riccati comparison bound phi_t(Q2) + E_{s,t}(Q2) [phi_s(Q1) -
    phi_s(Q2)] E_{s,t}(Q2)'; dominates any flow with sub-Riccati drift."""
    if s > t:
        raise PreconditionViolatedError("need s <= t")
    flow = integrate_det_flow(q2, t, dt, params)
    idx_s = int(np.argmin(np.abs(flow.grid - s)))
    idx_t = len(flow.grid) - 1
    e_st = flow.E[idx_t] @ np.linalg.inv(flow.E[idx_s])
    delta = np.asarray(phi_s_q1, dtype=float) - flow.P[idx_s]
    return matcore.sym_part(flow.P[idx_t] + e_st @ delta @ e_st.T)


# ---------------------------------------------------------------------------
# scalar comparison bounds (trace moments)


def _scalar_riccati_flow(a: float, rr: float, ss: float, p0: float,
                         t: float, n_sub: int = 2000) -> float:
    """RK4 quadrature of dp = 2 a p + rr - ss p^2."""
    if t == 0:
        return p0
    h = t / n_sub
    p = p0

    def f(x):
        return 2.0 * a * x + rr - ss * x * x

    for _ in range(n_sub):
        k1 = f(p)
        k2 = f(p + 0.5 * h * k1)
        k3 = f(p + 0.5 * h * k2)
        k4 = f(p + h * k3)
        p += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def trace_moment_scalars(params: ModelParams, n: int) -> tuple[float, float, float]:
    """(a, r_n, s_n) driving the scalar comparison flow for the n-th trace
    moment: a = mu(A), r_n = Tr(R) + (eps^2/2)(n-1) l1(U),
    s_n = l_r(S)/r - (eps^2/2)(n-1) l1(V)."""
    a = matcore.log_norm(params.A)
    rr = float(np.trace(params.R))
    ss = float(np.linalg.eigvalsh(params.S)[0]) / params.dim
    e2 = params.eps**2
    lam1_u = float(np.linalg.eigvalsh(params.U)[-1])
    lam1_v = float(np.linalg.eigvalsh(params.V)[-1])
    r_n = rr + (e2 / 2.0) * (n - 1) * lam1_u
    s_n = ss - (e2 / 2.0) * (n - 1) * lam1_v
    return a, r_n, s_n


def trace_moment_bound(params: ModelParams, n: int, t: float,
                       q0: Array) -> tuple[float, float]:
    """Scalar dominating bound for E[Tr(Q_t)^n]^{1/n}: the comparison flow
    value at t and the stationary cap max(p_inf, Tr(Q0)).  Returns
    (inf, inf) above the moment threshold."""
    a, r_n, s_n = trace_moment_scalars(params, n)
    tr0 = float(np.trace(np.asarray(q0, dtype=float)))
    if s_n <= 0.0:
        return math.inf, math.inf
    p_t = _scalar_riccati_flow(a, r_n, s_n, tr0, t)
    p_inf = (a + math.sqrt(a * a + r_n * s_n)) / s_n
    return p_t, max(p_inf, tr0)


def inverse_trace_bound(params: ModelParams, n: int, q0: Array) -> float:
    """Uniform-in-time bound for E[Tr(Q_t^{-1})^n]^{1/n}; inf above the
    inverse-moment threshold."""
    r = params.dim
    a_m = -float(np.linalg.eigvalsh(matcore.sym_part(params.A))[0])
    r_m = float(np.trace(params.S))
    s_m = float(np.linalg.eigvalsh(params.R)[0]) / r
    e2 = params.eps**2
    lam1_u = float(np.linalg.eigvalsh(params.U)[-1])
    lam1_v = float(np.linalg.eigvalsh(params.V)[-1])
    s_n = s_m - (e2 / 2.0) * ((n + 1.0 / r) * lam1_u + lam1_v / 4.0)
    if s_n <= 0.0:
        return math.inf
    q0 = np.asarray(q0, dtype=float)
    tr0 = float(np.trace(q0))
    _, cap2n = trace_moment_bound(params, 2 * n, 0.0, q0)
    if math.isinf(cap2n):
        return math.inf
    r_n = r_m + (e2 / 2.0) * (
        (1.0 + r / 2.0) * float(np.trace(params.V))
        + (n - 1) * lam1_v
        + lam1_v / 4.0 * max(cap2n**2, tr0**2)
    )
    p_inf = (a_m + math.sqrt(a_m * a_m + r_n * s_n)) / s_n
    tr_inv0 = float(np.trace(np.linalg.inv(q0)))
    return max(p_inf, tr_inv0)


# ---------------------------------------------------------------------------
# stochastic simulation wrappers


def _grid_to_steps(t_grid, dt: float) -> tuple[np.ndarray, int]:
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise PreconditionViolatedError("t_grid must be positive and increasing")
    steps = np.round(t_grid / dt).astype(np.int64)
    steps = np.maximum(steps, 1)
    if np.any(np.abs(steps * dt - t_grid) > 1e-9 * np.maximum(t_grid, 1.0)):
        raise PreconditionViolatedError("every grid time must be a multiple of dt")
    if np.any(np.diff(steps) <= 0):
        raise PreconditionViolatedError("grid times collide at this dt")
    return steps, int(steps[-1])


@dataclass
class SimBatch:
    """Terminal/grid snapshots of a batch of diffusion paths."""

    t_grid: Array
    Q: Array  # (n_paths, n_rec, r, r)
    E: Array | None
    logdet: Array | None
    X: Array | None
    diverged: Array  # (n_paths,) bool
    floor_events: int
    n_steps: int
    dt: float
    seed: int

    @property
    def floor_rate(self) -> float:
        return self.floor_events / max(1, self.Q.shape[0] * self.n_steps)

    @property
    def diverged_fraction(self) -> float:
        return float(self.diverged.mean())


def _check_q0(q0: Array, params: ModelParams) -> Array:
    q0 = matcore.sym_part(np.asarray(q0, dtype=float))
    if q0.shape != (params.dim, params.dim):
        raise DimensionMismatchError("Q0 and model dimensions differ")
    if matcore.min_eig(q0) < -matcore.psd_tol(q0):
        raise NotPositiveSemidefiniteError("Q0 must be PSD")
    return q0


def simulate_batch(
    params: ModelParams,
    q0: Array,
    t_grid,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    purpose: str = "riccati-forward",
    path_offset: int = 0,
    track_e: bool = False,
    track_x: bool = False,
    a_ou: Array | None = None,
    ebar: float = 0.0,
    x0: Array | None = None,
    guard: float = BLOWUP_GUARD,
) -> SimBatch:
    """Euler-Maruyama paths of the matrix diffusion, recorded at t_grid.

    Post-step states are symmetrized and eigenvalue-floored at zero; flooring
    events are counted.  With ``track_e`` the semigroup E_t is advanced by
    per-step product integration (third-order truncated exponential of the
    frozen generator) together with the left-endpoint quadrature of
    Tr(A - Q S), so the log-determinant identity is checked between two
    genuinely different computations.  ``track_x`` co-simulates the filter
    error process driven by the same path.
    """
    q0 = _check_q0(q0, params)
    r = params.dim
    rec_steps, n_steps = _grid_to_steps(t_grid, dt)
    key = stream_key(seed, purpose)
    n_rec = len(rec_steps)
    out_q = np.empty((n_paths, n_rec, r, r))
    out_e = np.empty((n_paths, n_rec, r, r)) if track_e else np.empty((1, 1, r, r))
    out_ld = np.empty((n_paths, n_rec)) if track_e else np.empty((1, 1))
    out_x = np.empty((n_paths, n_rec, r)) if track_x else np.empty((1, 1, r))
    out_div = np.zeros(n_paths, dtype=np.uint8)
    out_floor = np.zeros(n_paths, dtype=np.int64)
    a_ou_arr = np.asarray(a_ou, dtype=float) if a_ou is not None else params.A
    x0_arr = np.asarray(x0, dtype=float) if x0 is not None else np.zeros(r)
    _kernels.riccati_forward_kernel(
        q0, params.A, params.R, params.S, params.kappa, params.varpi, params.eps,
        dt, n_steps, rec_steps, key, path_offset, n_paths,
        1 if track_e else 0, 1 if track_x else 0, a_ou_arr, ebar, x0_arr,
        guard, out_q, out_e, out_ld, out_x, out_div, out_floor,
    )
    return SimBatch(
        t_grid=rec_steps * dt,
        Q=out_q,
        E=out_e if track_e else None,
        logdet=out_ld if track_e else None,
        X=out_x if track_x else None,
        diverged=out_div.astype(bool),
        floor_events=int(out_floor.sum()),
        n_steps=n_steps,
        dt=dt,
        seed=seed,
    )


def simulate_batch_auto(params, q0, t_grid, dt, n_paths, seed,
                        max_halvings: int = 3, floor_budget: float = 0.01,
                        **kw) -> SimBatch:
    """simulate_batch with the automatic dt-halving guard: if more than
    ``floor_budget`` of all steps needed eigenvalue flooring, halve dt and
    rerun (at most ``max_halvings`` times)."""
    for _ in range(max_halvings + 1):
        batch = simulate_batch(params, q0, t_grid, dt, n_paths, seed, **kw)
        if batch.floor_rate < floor_budget:
            return batch
        dt /= 2.0
    warnings.warn("flooring rate above budget after max dt halvings")
    return batch


@dataclass
class RiccatiPath:
    """A single realized trajectory with its semigroup and the running
    integral of Tr(A - Q_s S)."""

    grid: Array
    Q_packed: Array  # (m, r(r+1)/2) upper-triangle storage
    E: Array | None
    logdet_integral: Array | None
    seed: int
    dt: float
    dim: int
    floor_events: int = 0
    diverged: bool = False

    @property
    def Q(self) -> Array:
        m = self.Q_packed.shape[0]
        out = np.zeros((m, self.dim, self.dim))
        iu = np.triu_indices(self.dim)
        for k in range(m):
            out[k][iu] = self.Q_packed[k]
            out[k].T[iu] = self.Q_packed[k]
        return out

    def Q_symmat(self, k: int) -> matcore.SymMat:
        return matcore.SymMat(self.dim, self.Q_packed[k])


def _pack_sym(mats: Array) -> Array:
    iu = np.triu_indices(mats.shape[-1])
    return mats[..., iu[0], iu[1]]


def _noise_guard(q0: Array, params: ModelParams, dt: float) -> None:
    if params.eps == 0:
        return
    sig = sigma_map(matcore.psd_floor(q0), params)
    level = params.eps**2 * np.linalg.norm(q0, 2) * np.linalg.norm(sig, 2) * dt
    if level > 0.1:
        warnings.warn(
            f"noise scale eps^2*|Q0|*|Sigma(Q0)|*dt = {level:.3g} > 0.1; "
            "consider a smaller dt"
        )


def simulate_path(q0: Array, t_final: float, dt: float, params: ModelParams,
                  seed: int, record_stride: int = 1,
                  path_index: int = 0) -> RiccatiPath:
    """One matrix-diffusion trajectory with E_t and the Liouville accumulator."""
    q0 = _check_q0(q0, params)
    _noise_guard(q0, params, dt)
    n_steps = max(1, int(round(t_final / dt)))
    rec = np.arange(record_stride, n_steps + 1, record_stride, dtype=np.int64)
    if len(rec) == 0 or rec[-1] != n_steps:
        rec = np.append(rec, n_steps)
    batch = simulate_batch(params, q0, rec * dt, dt, 1, seed,
                           path_offset=path_index, track_e=True)
    grid = np.concatenate([[0.0], batch.t_grid])
    q_all = np.concatenate([q0[None], batch.Q[0]])
    e_all = np.concatenate([np.eye(params.dim)[None], batch.E[0]])
    ld_all = np.concatenate([[0.0], batch.logdet[0]])
    return RiccatiPath(
        grid=grid, Q_packed=_pack_sym(q_all), E=e_all, logdet_integral=ld_all,
        seed=seed, dt=dt, dim=params.dim,
        floor_events=batch.floor_events, diverged=bool(batch.diverged[0]),
    )


def simulate_batch_vech(params: ModelParams, q0: Array, t_grid, dt: float,
                        n_paths: int, seed: int, *,
                        purpose: str = "riccati-vech", path_offset: int = 0,
                        guard: float = BLOWUP_GUARD):
    """Half-vectorized formulation driven by an rbar-dimensional Brownian
    motion through the symmetric tensor embedding; equal in law to
    simulate_batch, never pathwise."""
    q0 = _check_q0(q0, params)
    r = params.dim
    rbar = r * (r + 1) // 2
    rec_steps, n_steps = _grid_to_steps(t_grid, dt)
    key = stream_key(seed, purpose)
    basis = matcore.vech_basis(r)
    out_v = np.empty((n_paths, len(rec_steps), rbar))
    out_div = np.zeros(n_paths, dtype=np.uint8)
    out_floor = np.zeros(n_paths, dtype=np.int64)
    _kernels.riccati_vech_kernel(
        q0, basis, params.A, params.R, params.S, params.kappa, params.varpi,
        params.eps, dt, n_steps, rec_steps, key, path_offset, n_paths, guard,
        out_v, out_div, out_floor,
    )
    return out_v, rec_steps * dt, out_div.astype(bool), int(out_floor.sum())


def simulate_path_vech(q0: Array, t_final: float, dt: float,
                       params: ModelParams, seed: int,
                       path_index: int = 0) -> RiccatiPath:
    """Single-path view of the vectorized scheme (distributional twin of
    simulate_path)."""
    q0 = _check_q0(q0, params)
    _noise_guard(q0, params, dt)
    n_steps = max(1, int(round(t_final / dt)))
    rec = np.arange(1, n_steps + 1, dtype=np.int64)
    coords, grid, div, floors = simulate_batch_vech(
        params, q0, rec * dt, dt, 1, seed, path_offset=path_index)
    mats = np.array([matcore.unvech(c) for c in coords[0]])
    q_all = np.concatenate([q0[None], mats])
    # reconstruct the semigroup and trace quadrature from the recorded states
    r = params.dim
    e = np.eye(r)
    e_all = [e]
    ld = 0.0
    ld_all = [0.0]
    for k in range(n_steps):
        f = params.A - q_all[k] @ params.S
        x = f * dt
        e = e + x @ e + x @ (x @ e) / 2.0 + x @ (x @ (x @ e)) / 6.0
        ld += float(np.trace(f)) * dt
        e_all.append(e.copy())
        ld_all.append(ld)
    return RiccatiPath(
        grid=np.concatenate([[0.0], grid]),
        Q_packed=_pack_sym(q_all), E=np.array(e_all),
        logdet_integral=np.array(ld_all), seed=seed, dt=dt, dim=r,
        floor_events=floors, diverged=bool(div[0]),
    )


def simulate_batch_inverse(params: ModelParams, q0: Array, t_grid, dt: float,
                           n_paths: int, seed: int, *,
                           purpose: str = "riccati-inverse",
                           path_offset: int = 0, guard: float = BLOWUP_GUARD):
    """Paths of the inverse flow Z ~ Q^{-1} under its own diffusion equation
    (exact drift with Ito corrections); equal in law to inverted forward
    paths.  Z0 = Q0^{-1} must be SPD."""
    q0 = np.asarray(q0, dtype=float)
    if matcore.min_eig(q0) <= 0:
        raise NotPositiveSemidefiniteError("inverse flow needs SPD Q0")
    thr = thresholds(params)
    if params.eps > thr.eps0 + 1e-12:
        raise PreconditionViolatedError(
            f"inverse flow needs eps <= eps0 = {thr.eps0:.6g}")
    z0 = matcore.sym_part(np.linalg.inv(q0))
    rec_steps, n_steps = _grid_to_steps(t_grid, dt)
    key = stream_key(seed, purpose)
    out_z = np.empty((n_paths, len(rec_steps), params.dim, params.dim))
    out_div = np.zeros(n_paths, dtype=np.uint8)
    _kernels.riccati_inverse_kernel(
        z0, params.A, params.R, params.S, params.kappa, params.varpi,
        params.eps, dt, n_steps, rec_steps, key, path_offset, n_paths, guard,
        out_z, out_div,
    )
    return out_z, rec_steps * dt, out_div.astype(bool)


@dataclass
class InversePath:
    grid: Array
    Z_packed: Array
    seed: int
    dt: float
    dim: int
    diverged: bool

    @property
    def Z(self) -> Array:
        m = self.Z_packed.shape[0]
        out = np.zeros((m, self.dim, self.dim))
        iu = np.triu_indices(self.dim)
        for k in range(m):
            out[k][iu] = self.Z_packed[k]
            out[k].T[iu] = self.Z_packed[k]
        return out


def simulate_inverse_path(q0: Array, t_final: float, dt: float,
                          params: ModelParams, seed: int,
                          record_stride: int = 1,
                          path_index: int = 0) -> InversePath:
    n_steps = max(1, int(round(t_final / dt)))
    rec = np.arange(record_stride, n_steps + 1, record_stride, dtype=np.int64)
    if len(rec) == 0 or rec[-1] != n_steps:
        rec = np.append(rec, n_steps)
    z, grid, div = simulate_batch_inverse(params, q0, rec * dt, dt, 1, seed,
                                          path_offset=path_index)
    z0 = matcore.sym_part(np.linalg.inv(np.asarray(q0, dtype=float)))
    z_all = np.concatenate([z0[None], z[0]])
    return InversePath(
        grid=np.concatenate([[0.0], grid]), Z_packed=_pack_sym(z_all),
        seed=seed, dt=dt, dim=params.dim, diverged=bool(div[0]),
    )


def inverse_drift_exact(z: Array, params: ModelParams) -> Array:
    """Exact inverse-flow drift at state Z = Q^{-1}, including both Ito
    correction terms."""
    z = matcore.sym_part(np.asarray(z, dtype=float))
    zinv = np.linalg.inv(z)
    sigf = sigma_map(matcore.psd_floor(zinv), params)
    sigm = matcore.sym_part(z @ sigf @ z)
    c = params.eps**2 / 4.0
    r = params.dim
    out = (
        -z @ params.A - params.A.T @ z + params.S - z @ params.R @ z
        + c * (r + 2) * sigm + c * float(np.trace(z @ sigf)) * z
    )
    return matcore.sym_part(out)


def inverse_drift_bound(z: Array, params: ModelParams) -> Array:
    """Dominating drift envelope -ZA - A'Z + S^eps_- - Z R^eps_- Z +
    (eps^2/4)(Tr(ZU) + Tr(V Z^{-1})) Z."""
    z = matcore.sym_part(np.asarray(z, dtype=float))
    c = params.eps**2 / 4.0
    r = params.dim
    r_m = params.R - c * (r + 2) * params.U
    s_m = params.S + c * (r + 2) * params.V
    zinv = np.linalg.inv(z)
    out = (
        -z @ params.A - params.A.T @ z + s_m - z @ r_m @ z
        + c * (float(np.trace(z @ params.U)) + float(np.trace(params.V @ zinv))) * z
    )
    return matcore.sym_part(out)
