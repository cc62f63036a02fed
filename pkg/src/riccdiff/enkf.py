"""Linear-Gaussian signal/observation simulation, the exact Kalman-Bucy
reference filter, and the two McKean-Vlasov ensemble Kalman-Bucy particle
systems with additive covariance inflation.

The rescaled sample covariance of an (N+1)-particle system coincides in law
with the matrix Riccati diffusion at eps = 2/sqrt(N): kappa = 1 for the
perturbed-observation variant (type 1), kappa = 0 for the deterministic
midpoint-innovation variant (type 2).  Inflation by varpi*I in the gain maps
onto the drift substitutions A - varpi*S (type 1) and A - varpi*S/2 (type 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import matcore
from ._rng import normal_field, stream_key
from .errors import (
    DimensionMismatchError,
    NotPositiveSemidefiniteError,
    PreconditionViolatedError,
)
from .riccati import DetFlow, ModelParams, integrate_det_flow

Array = np.ndarray


@dataclass(frozen=True)
class FilterModel:
    """Linear-Gaussian model dX = AX dt + R1^{1/2} dW, dY = BX dt + R2^{1/2} dV.

    The induced Riccati data are R = R1 and S = B' R2^{-1} B."""

    A: Array
    B: Array
    R1: Array
    R2: Array
    S: Array = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float)
        r1 = matcore.sym_part(np.asarray(self.R1, dtype=float))
        r2 = matcore.sym_part(np.asarray(self.R2, dtype=float))
        r = a.shape[0]
        if a.shape != (r, r):
            raise DimensionMismatchError("A must be square")
        if b.ndim != 2 or b.shape[1] != r:
            raise DimensionMismatchError("B must be (obs_dim, r)")
        d = b.shape[0]
        if r1.shape != (r, r) or r2.shape != (d, d):
            raise DimensionMismatchError("noise covariances have wrong shapes")
        if matcore.min_eig(r1) < -matcore.psd_tol(r1):
            raise NotPositiveSemidefiniteError("R1 must be PSD")
        if matcore.min_eig(r2) <= 0:
            raise NotPositiveSemidefiniteError("R2 must be SPD")
        object.__setattr__(self, "A", a.copy())
        object.__setattr__(self, "B", b.copy())
        object.__setattr__(self, "R1", r1)
        object.__setattr__(self, "R2", r2)
        s = matcore.sym_part(b.T @ np.linalg.solve(r2, b))
        object.__setattr__(self, "S", s)

    @property
    def R(self) -> Array:
        return self.R1

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.B.shape[0]

    def riccati_params(self, kappa: int = 1, varpi: float = 0.0,
                       eps: float = 0.0, inflate_drift: bool = True) -> ModelParams:
        """Riccati diffusion parameters for the rescaled sample covariance.

        The inflation substitution shifts A by varpi*S (type 1, kappa=1) or
        varpi*S/2 (type 2, kappa=0).  For type 2 this reproduces the exact
        covariance drift.  For type 1 the shifted A describes the error
        process and the semigroup analysis; the exact covariance drift of
        the gain-inflated particle system is Theta(P) + varpi^2 S under the
        unshifted A (the inflation of the perturbation-noise gain cancels
        the first-order drift effect), see
        :func:`inflated_covariance_drift`."""
        shift = varpi if kappa == 1 else varpi / 2.0
        a = self.A - shift * self.S if inflate_drift else self.A
        return ModelParams(A=a, R=self.R1, S=self.S, kappa=kappa, varpi=varpi,
                           eps=eps)

    def inflated_covariance_drift(self, p: Array, flavor: int,
                                  varpi: float) -> Array:
        """Exact N->infinity drift of the rescaled sample covariance of the
        gain-inflated particle system: Theta(P) + varpi^2 S for the
        perturbed-observation variant, Theta(P) under A - varpi*S/2 for the
        midpoint variant."""
        from .riccati import drift_theta

        if flavor == 1:
            base = self.riccati_params(kappa=1, varpi=varpi,
                                       inflate_drift=False)
            return drift_theta(p, base) + varpi**2 * self.S
        base = self.riccati_params(kappa=0, varpi=varpi)
        return drift_theta(p, base)


def ensemble_eps(n_particles: int) -> tuple[float, float]:
    """(eps, ebar) for an (N+1)-particle system: 2/sqrt(N), 1/sqrt(N+1)."""
    eps = 2.0 / np.sqrt(n_particles)
    return eps, eps / np.sqrt(eps**2 + 4.0)


# ---------------------------------------------------------------------------
# signal / observation simulation


@dataclass
class TruthPath:
    grid: Array
    X: Array  # (n_runs, n_steps + 1, r)
    dY: Array  # (n_runs, n_steps, obs_dim)
    dt: float
    seed: int


def _van_loan(a: Array, r1: Array, dt: float) -> tuple[Array, Array]:
    """Exact one-step transition: state matrix e^{A dt} and the integrated
    process-noise covariance, via the Van Loan block exponential."""
    r = a.shape[0]
    blk = np.zeros((2 * r, 2 * r))
    blk[:r, :r] = -a
    blk[:r, r:] = r1
    blk[r:, r:] = a.T
    e = expm(blk * dt)
    phi = e[r:, r:].T
    qd = matcore.sym_part(phi @ e[:r, r:])
    return phi, qd


def simulate_truth(model: FilterModel, t_final: float, dt: float, seed: int,
                   n_runs: int = 1, x0: Array | None = None,
                   purpose: str = "enkf-truth") -> TruthPath:
    """Signal by exact Gaussian transition (Van Loan discretization);
    observation increments dY_k = B X_k dt + R2^{1/2} dV_k."""
    if dt <= 0:
        raise PreconditionViolatedError("dt must be positive")
    r, d = model.dim, model.obs_dim
    n_steps = max(1, int(round(t_final / dt)))
    phi, qd = _van_loan(model.A, model.R1, dt)
    qd_half = matcore.sqrt_psd(qd)
    r2_half = matcore.sqrt_psd(model.R2)
    key = stream_key(seed, purpose)
    runs = np.arange(n_runs)
    x = np.zeros((n_runs, n_steps + 1, r))
    if x0 is not None:
        x[:, 0] = np.asarray(x0, dtype=float)
    dy = np.empty((n_runs, n_steps, d))
    sdt = np.sqrt(dt)
    for k in range(n_steps):
        z = normal_field(key, runs, k, r + d)
        x[:, k + 1] = x[:, k] @ phi.T + z[:, :r] @ qd_half.T
        dy[:, k] = x[:, k] @ model.B.T * dt + z[:, r:] @ r2_half.T * sdt
    grid = np.arange(n_steps + 1) * dt
    return TruthPath(grid=grid, X=x, dY=dy, dt=dt, seed=seed)


# ---------------------------------------------------------------------------
# Kalman-Bucy reference filter


def kalman_bucy(model: FilterModel, d_y: Array, m0: Array, p0: Array,
                dt: float) -> tuple[Array, DetFlow]:
    """Exact filter: covariance by the shared deterministic Riccati
    integrator, mean by Euler consumption of the observation increments."""
    params = model.riccati_params(kappa=0, varpi=0.0, eps=0.0,
                                  inflate_drift=False)
    n_steps = d_y.shape[0]
    flow = integrate_det_flow(p0, n_steps * dt, dt, params)
    gain_rhs = np.linalg.solve(model.R2, model.B).T  # B' R2^{-1}
    m = np.asarray(m0, dtype=float).copy()
    means = [m.copy()]
    for k in range(n_steps):
        p = flow.P[k]
        m = m + (model.A - p @ model.S) @ m * dt + p @ gain_rhs @ d_y[k]
        means.append(m.copy())
    return np.array(means), flow


# ---------------------------------------------------------------------------
# ensemble Kalman-Bucy particle systems


@dataclass
class Ensemble:
    """An (N+1)-particle cloud; ``flavor`` 1 is perturbed-observation,
    2 is deterministic midpoint innovation."""

    particles: Array  # (N + 1, r)
    flavor: int = 1
    varpi: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2 or p.shape[0] < 2:
            raise PreconditionViolatedError("need at least two particles")
        if self.flavor not in (1, 2):
            raise PreconditionViolatedError("flavor must be 1 or 2")
        if self.varpi < 0:
            raise PreconditionViolatedError("varpi must be nonnegative")
        self.particles = p

    @property
    def n(self) -> int:
        return self.particles.shape[0] - 1


def sample_stats(ensemble: Ensemble | Array) -> tuple[Array, Array]:
    """Sample mean and the rescaled covariance (1 + 1/N) * empirical
    covariance around the mean (the unbiased N-divisor form)."""
    x = ensemble.particles if isinstance(ensemble, Ensemble) else np.asarray(ensemble)
    n = x.shape[0] - 1
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n + 1)
    return mean, matcore.sym_part((1.0 + 1.0 / n) * cov)


def gaussian_ensemble(n_particles: int, mean: Array, cov: Array, seed: int,
                      flavor: int = 1, varpi: float = 0.0,
                      exact_moments: bool = False,
                      purpose: str = "enkf-init") -> Ensemble:
    """Draw an i.i.d. Gaussian cloud; with ``exact_moments`` the draw is
    affinely corrected so the sample mean and rescaled covariance match
    (mean, cov) exactly."""
    r = len(mean)
    key = stream_key(seed, purpose)
    z = normal_field(key, np.arange(n_particles + 1), 0, r)
    if exact_moments:
        z -= z.mean(axis=0)
        _, cz = sample_stats(z)
        z = z @ np.linalg.inv(matcore.sqrt_psd(cz)).T
    x = np.asarray(mean) + z @ matcore.sqrt_psd(np.asarray(cov)).T
    return Ensemble(particles=x, flavor=flavor, varpi=varpi)


def enkf_step(ensemble: Ensemble, d_y_k: Array, model: FilterModel, dt: float,
              rng: np.random.Generator) -> Ensemble:
    """One Euler-Maruyama assimilation step of the interacting particle
    system; the observation increment is shared, all perturbation noises are
    particle-independent."""
    x = ensemble.particles
    n1, r = x.shape
    mean, p_hat = sample_stats(ensemble)
    gain = (p_hat + ensemble.varpi * np.eye(r)) @ model.B.T
    gain = np.linalg.solve(model.R2.T, gain.T).T  # (P+vI) B' R2^{-1}
    dw = rng.standard_normal((n1, r)) * np.sqrt(dt)
    r_half = matcore.sqrt_psd(model.R1)
    if ensemble.flavor == 1:
        dv = rng.standard_normal((n1, model.obs_dim)) * np.sqrt(dt)
        r2_half = matcore.sqrt_psd(model.R2)
        innov = d_y_k[None, :] - x @ model.B.T * dt - dv @ r2_half.T
    else:
        innov = d_y_k[None, :] - 0.5 * (x + mean[None, :]) @ model.B.T * dt
    x_new = x + x @ model.A.T * dt + dw @ r_half.T + innov @ gain.T
    return Ensemble(particles=x_new, flavor=ensemble.flavor,
                    varpi=ensemble.varpi)


@dataclass
class FilterRun:
    """Batched filter output: rescaled covariances and means at the grid."""

    grid: Array
    P_hat: Array  # (n_runs, n_rec, r, r)
    M_hat: Array  # (n_runs, n_rec, r)
    truth: TruthPath
    dt: float
    seed: int


def run_filters(model: FilterModel, n_particles: int, t_grid, dt: float,
                n_runs: int, seed: int, flavor: int = 1, varpi: float = 0.0,
                m0: Array | None = None, p0: Array | None = None,
                exact_init: bool = False,
                purpose: str = "enkf-run") -> FilterRun:
    """Run independent EnKF realizations (each with its own signal and
    observation path), vectorized over runs and particles."""
    r, d = model.dim, model.obs_dim
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    rec_steps = np.round(t_grid / dt).astype(int)
    n_steps = int(rec_steps[-1])
    truth = simulate_truth(model, n_steps * dt, dt, seed, n_runs=n_runs,
                           purpose=purpose + "-truth")
    m0 = np.zeros(r) if m0 is None else np.asarray(m0, dtype=float)
    p0 = np.eye(r) if p0 is None else np.asarray(p0, dtype=float)
    key = stream_key(seed, purpose + "-particles")
    # initial cloud per run
    x = np.empty((n_runs, n_particles + 1, r))
    for i in range(n_runs):
        ens = gaussian_ensemble(n_particles, m0, p0, seed + 7919 * i,
                                flavor=flavor, varpi=varpi,
                                exact_moments=exact_init,
                                purpose=purpose + "-init")
        x[i] = ens.particles
    r_half = matcore.sqrt_psd(model.R1)
    r2_half = matcore.sqrt_psd(model.R2)
    eye = np.eye(r)
    sdt = np.sqrt(dt)
    run_ids = np.arange(n_runs)
    n_rec = len(rec_steps)
    p_out = np.empty((n_runs, n_rec, r, r))
    m_out = np.empty((n_runs, n_rec, r))
    irec = 0
    n1 = n_particles + 1
    slot_w = n1 * r  # per-run noise layout: W block then V block
    for k in range(n_steps):
        mean = x.mean(axis=1)
        centered = x - mean[:, None, :]
        p_hat = (1.0 + 1.0 / n_particles) / (n1) * np.einsum(
            "npi,npj->nij", centered, centered)
        gain = (p_hat + varpi * eye) @ np.linalg.solve(model.R2, model.B).T[None]
        z = normal_field(key, run_ids, k, slot_w + (n1 * d if flavor == 1 else 0))
        dw = z[:, :slot_w].reshape(n_runs, n1, r) * sdt
        if flavor == 1:
            dv = z[:, slot_w:].reshape(n_runs, n1, d) * sdt
            innov = (truth.dY[:, k][:, None, :]
                     - np.einsum("npi,di->npd", x, model.B) * dt
                     - dv @ r2_half.T)
        else:
            mid = 0.5 * (x + mean[:, None, :])
            innov = (truth.dY[:, k][:, None, :]
                     - np.einsum("npi,di->npd", mid, model.B) * dt)
        x = (x + np.einsum("npj,ij->npi", x, model.A) * dt
             + dw @ r_half.T
             + np.einsum("npd,nid->npi", innov, gain))
        while irec < n_rec and rec_steps[irec] == k + 1:
            mean = x.mean(axis=1)
            centered = x - mean[:, None, :]
            p_out[:, irec] = (1.0 + 1.0 / n_particles) / n1 * np.einsum(
                "npi,npj->nij", centered, centered)
            m_out[:, irec] = mean
            irec += 1
    return FilterRun(grid=rec_steps * dt, P_hat=p_out, M_hat=m_out,
                     truth=truth, dt=dt, seed=seed)
