"""Stochastic simulation layer: kernel correctness against pure-python
replicas, the martingale increment covariance, law equivalence of the
vectorized scheme, the inverse flow, the Liouville identity, and the
determinism contract."""

import math

import numpy as np
import pytest

import riccdiff
from riccdiff import _rng, matcore, mc, riccati

from conftest import random_spd


def make_params(r=2, kappa=1, varpi=0.0, eps=0.0, a=None):
    a = np.zeros((r, r)) if a is None else a
    return riccati.ModelParams(A=a, R=np.eye(r), S=np.eye(r), kappa=kappa,
                               varpi=varpi, eps=eps)


# -- in-kernel eigenwork vs LAPACK ---------------------------------------------

def test_kernel_psd_sqrt_matches_matcore(rng):
    from riccdiff import _kernels

    for r in (1, 2, 3, 5):
        for _ in range(40):
            q = random_spd(rng, r, scale=2.0)
            out = np.empty((r, r))
            scr = np.empty((r, r))
            w = np.empty(r)
            v = np.empty((r, r))
            _kernels._psd_sqrt(q, out, r, scr, w, v)
            ref = matcore.sqrt_psd(q)
            assert np.abs(out - ref).max() <= 1e-12 * (1 + np.abs(ref).max())


def test_kernel_floor_matches_matcore(rng):
    from riccdiff import _kernels

    for r in (2, 3, 4):
        for _ in range(40):
            m = rng.standard_normal((r, r))
            q = 0.5 * (m + m.T)  # indefinite
            qk = q.copy()
            scr = np.empty((r, r))
            w = np.empty(r)
            v = np.empty((r, r))
            floored = _kernels._floor_psd(qk, r, scr, w, v)
            wq = np.linalg.eigvalsh(q)
            assert floored == (1 if wq[0] < 0 else 0)
            ref_w, ref_v = np.linalg.eigh(q)
            ref = (ref_v * np.maximum(ref_w, 0.0)) @ ref_v.T
            assert np.abs(qk - ref).max() <= 1e-12 * (1 + np.abs(ref).max())


# -- kernel vs independent python replica -------------------------------------

def reference_euler_path(params, q0, dt, n_steps, seed, path_index=0):
    """Line-by-line pure-python Euler-Maruyama using the numpy counter RNG;
    the oracle for the compiled kernel."""
    key = _rng.stream_key(seed, "riccati-forward")
    q = q0.copy()
    r = params.dim
    for k in range(n_steps):
        th = riccati.drift_theta(q, params)
        q_new = q + th * dt
        if params.eps > 0:
            sig = riccati.sigma_map(matcore.psd_floor(q), params)
            sq = matcore.sqrt_psd(q)
            ss = matcore.sqrt_psd(sig)
            dw = _rng.normals(key, path_index, k, r * r).reshape(r, r)
            noise = sq @ (dw * math.sqrt(dt)) @ ss
            q_new = q_new + params.eps * 0.5 * (noise + noise.T)
        q = 0.5 * (q_new + q_new.T)
        w, v = np.linalg.eigh(q)
        if w[0] < 0:
            q = 0.5 * ((v * np.maximum(w, 0.0)) @ v.T
                       + ((v * np.maximum(w, 0.0)) @ v.T).T)
    return q


@pytest.mark.parametrize("r,eps,kappa,varpi", [
    (1, 0.4, 1, 0.0), (2, 0.3, 1, 0.0), (2, 0.5, 0, 0.0),
    (2, 0.2, 1, 0.5), (3, 0.3, 1, 0.2),
])
def test_kernel_matches_python_replica(r, eps, kappa, varpi, rng):
    a = rng.standard_normal((r, r)) * 0.3
    params = riccati.ModelParams(A=a, R=random_spd(rng, r), S=random_spd(rng, r),
                                 kappa=kappa, varpi=varpi, eps=eps)
    q0 = random_spd(rng, r)
    dt, n_steps = 1e-3, 60
    batch = riccati.simulate_batch(params, q0, [n_steps * dt], dt, 3, seed=11)
    for p_idx in range(3):
        ref = reference_euler_path(params, q0, dt, n_steps, 11, p_idx)
        np.testing.assert_allclose(batch.Q[p_idx, -1], ref, rtol=0, atol=1e-12)


def test_eps_zero_matches_euler_everywhere():
    params = make_params(a=np.array([[0.3, 0.2], [0.1, -0.4]]))
    q0 = np.diag([1.5, 0.5])
    path = riccati.simulate_path(q0, 0.2, 1e-3, params, seed=1)
    q = q0.copy()
    for k in range(200):
        q = q + riccati.drift_theta(q, params) * 1e-3
        np.testing.assert_allclose(path.Q[k + 1], q, atol=1e-13)


# -- martingale increment covariance ------------------------------------------

def test_increment_covariance_matches_tensor_embed():
    # single Euler step from a fixed SPD state: the vech increments must have
    # covariance eps^2 {Q (x)_s Sigma(Q)} dt within 5 SE
    params = make_params(eps=0.3)
    q0 = np.array([[1.3, 0.4], [0.4, 0.8]])
    dt = 1e-3
    n = 100_000
    batch = riccati.simulate_batch(params, q0, [dt], dt, n, seed=5)
    drift = riccati.drift_theta(q0, params)
    incs = np.array([matcore.vech(m) for m in
                     (batch.Q[:, 0] - q0 - drift * dt)])
    cov = incs.T @ incs / n / (params.eps**2 * dt)
    target = matcore.sym_tensor_embed(q0, riccati.sigma_map(q0, params))
    # elementwise moment SE of a covariance estimate
    se = np.sqrt((np.outer(np.diag(target), np.diag(target))
                  + target**2) / n)
    assert np.all(np.abs(cov - target) <= 5.0 * se + 1e-12)


# -- law equivalence of the vectorized scheme ---------------------------------

def test_vech_scheme_matches_matrix_scheme_in_law():
    params = make_params(eps=0.4)
    q0 = np.diag([1.5, 0.6])
    t, dt, n = 1.0, 1e-3, 10_000
    mat = riccati.simulate_batch(params, q0, [t], dt, n, seed=3)
    vecs, _, div, _ = riccati.simulate_batch_vech(params, q0, [t], dt, n, seed=4)
    tr_mat = mat.Q[:, 0, 0, 0] + mat.Q[:, 0, 1, 1]
    tr_vec = vecs[:, 0, 0] + vecs[:, 0, 2]
    for moment in (1, 2):
        m1, s1, _ = mc.batch_means(tr_mat**moment)
        m2, s2, _ = mc.batch_means(tr_vec**moment)
        assert abs(m1 - m2) <= 3.0 * math.hypot(s1, s2)
    assert not div.any()


def test_vech_scheme_r1_same_law():
    params = riccati.scalar_params(0.5, 1.0, 1.0, eps=0.4)
    q0 = np.array([[0.8]])
    mat = riccati.simulate_batch(params, q0, [1.0], 1e-3, 4000, seed=9)
    vecs, _, _, _ = riccati.simulate_batch_vech(params, q0, [1.0], 1e-3, 4000,
                                                seed=10)
    assert mc.ks_distance(mat.Q[:, 0, 0, 0], vecs[:, 0, 0]) <= 0.05


# -- Liouville identity --------------------------------------------------------

def test_liouville_identity_pathwise():
    params = make_params(eps=0.3)
    for seed in range(3):
        path = riccati.simulate_path(np.eye(2), 2.0, 2.5e-4, params, seed=seed)
        ld_det = np.linalg.slogdet(path.E[-1])[1]
        gap = abs(ld_det - path.logdet_integral[-1])
        assert gap <= 1e-6 * (1.0 + abs(path.logdet_integral[-1]))


def test_liouville_holds_at_every_record():
    params = make_params(a=np.array([[0.2, 0.1], [0.0, -0.3]]), eps=0.25)
    path = riccati.simulate_path(np.diag([1.0, 2.0]), 1.0, 1e-3, params, seed=2)
    lds = np.array([np.linalg.slogdet(e)[1] for e in path.E])
    rel = np.abs(lds - path.logdet_integral) / (1.0 + np.abs(path.logdet_integral))
    assert rel.max() <= 1e-6


# -- inverse flow ---------------------------------------------------------------

def test_inverse_flow_deterministic_limit():
    # eps = 0: Euler on the inverse ODE converges to the inverted flow
    params = riccati.scalar_params(1.0, 1.0, 1.0, eps=0.0)
    q0 = np.array([[2.0]])
    exact = riccati.integrate_det_flow(q0, 1.0, 1e-4, params,
                                       record_stride=10**9).P[-1]
    ip = riccati.simulate_inverse_path(q0, 1.0, 2.5e-7, params, seed=1,
                                       record_stride=4_000_000)
    assert abs(ip.Z[-1][0, 0] - 1.0 / exact[0, 0]) <= 1e-8


def test_inverse_flow_law_matches_inverted_forward():
    params = riccati.scalar_params(1.0, 1.0, 1.0, eps=0.2)
    q0 = np.array([[1.0]])
    t, dt, n = 1.0, 1e-3, 10_000
    fwd = riccati.simulate_batch(params, q0, [t], dt, n, seed=21)
    inv_direct = 1.0 / fwd.Q[:, 0, 0, 0]
    z, _, div = riccati.simulate_batch_inverse(params, q0, [t], dt, n, seed=22)
    assert div.mean() < 0.01
    m1, s1, _ = mc.batch_means(inv_direct)
    m2, s2, _ = mc.batch_means(z[~div, 0, 0, 0])
    assert abs(m1 - m2) <= 3.0 * math.hypot(s1, s2)


def test_inverse_flow_requires_spd_and_threshold():
    params = make_params(eps=0.0)
    with pytest.raises(Exception):
        riccati.simulate_inverse_path(np.diag([1.0, 0.0]), 0.1, 1e-3, params, 1)
    hot = make_params(eps=5.0)
    with pytest.raises(Exception):
        riccati.simulate_inverse_path(np.eye(2), 0.1, 1e-3, hot, 1)


# -- under-bias, blow-up, flooring ---------------------------------------------

def test_under_bias_short_horizon():
    params = make_params(eps=0.3)
    q0 = np.eye(2)
    flow = riccati.integrate_det_flow(q0, 1.0, 1e-3, params,
                                      record_stride=10**9)
    batch = riccati.simulate_batch(params, q0, [1.0], 1e-3, 20_000, seed=8)
    lam, se = mc.loewner_min_slack(flow.P[-1], batch.Q[:, 0])
    assert lam >= -3.0 * se


def test_blowup_guard_trips():
    # S = 0 and unstable A: undetectable model whose paths must diverge
    params = riccati.ModelParams(A=2.0 * np.eye(2), R=np.eye(2),
                                 S=np.zeros((2, 2)), kappa=0, eps=0.1)
    assert not params.detectable
    batch = riccati.simulate_batch(params, 100.0 * np.eye(2), [12.0], 1e-2, 8,
                                   seed=3, guard=1e8)
    assert batch.diverged.all()


def test_noise_guard_warns():
    params = make_params(eps=0.5)
    with pytest.warns(UserWarning, match="noise scale"):
        riccati.simulate_path(60.0 * np.eye(2), 0.02, 1e-2, params, seed=1)


def test_floor_events_counted():
    # near-degenerate start with large noise must floor at least once
    params = make_params(eps=1.0)
    batch = riccati.simulate_batch(params, np.diag([1e-6, 1e-6]), [0.05],
                                   1e-3, 64, seed=12)
    assert batch.floor_events > 0
    assert np.all(np.linalg.eigvalsh(batch.Q[:, -1]) >= -1e-12)


def test_auto_halving_reduces_floor_rate():
    params = make_params(eps=1.0)
    batch = riccati.simulate_batch_auto(params, np.diag([1e-6, 1e-6]), [0.05],
                                        5e-3, 64, seed=12, max_halvings=3)
    assert batch.floor_rate < 0.01 or batch.dt < 5e-3


# -- determinism ----------------------------------------------------------------

def test_batch_reproducible_and_thread_invariant():
    params = make_params(eps=0.3)
    q0 = np.eye(2)
    a = riccati.simulate_batch(params, q0, [0.5], 1e-3, 500, seed=77,
                               track_e=True)
    b = riccati.simulate_batch(params, q0, [0.5], 1e-3, 500, seed=77,
                               track_e=True)
    np.testing.assert_array_equal(a.Q, b.Q)
    np.testing.assert_array_equal(a.E, b.E)
    old = riccdiff.set_threads(1)
    try:
        c = riccati.simulate_batch(params, q0, [0.5], 1e-3, 500, seed=77,
                                   track_e=True)
        np.testing.assert_array_equal(a.Q, c.Q)
        np.testing.assert_array_equal(a.logdet, c.logdet)
    finally:
        riccdiff.set_threads(2)


def test_chunked_paths_equal_monolithic():
    params = make_params(eps=0.3)
    q0 = np.eye(2)
    full = riccati.simulate_batch(params, q0, [0.3], 1e-3, 100, seed=5)
    lo = riccati.simulate_batch(params, q0, [0.3], 1e-3, 60, seed=5)
    hi = riccati.simulate_batch(params, q0, [0.3], 1e-3, 40, seed=5,
                                path_offset=60)
    np.testing.assert_array_equal(full.Q, np.vstack([lo.Q, hi.Q]))


# -- co-simulated error process -------------------------------------------------

def test_ou_error_variance_tracks_riccati():
    # eps = 0, varpi = 0, X0 = 0 = Q0: the co-simulated error is the exact
    # Kalman-Bucy error OU, whose covariance is the Riccati flow itself
    params = make_params(a=np.array([[0.2, 0.0], [0.1, -0.4]]), eps=0.0)
    q0 = np.zeros((2, 2))
    t = 1.5
    n = 20_000
    batch = riccati.simulate_batch(params, q0, [t], 1e-3, n, seed=31,
                                   track_x=True, a_ou=params.A, ebar=0.0,
                                   x0=np.zeros(2))
    flow = riccati.integrate_det_flow(q0, t, 1e-3, params, record_stride=10**9)
    emp = batch.X[:, 0].T @ batch.X[:, 0] / n
    target = flow.P[-1]
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
    assert np.all(np.abs(emp - target) <= 3.0 * se + 1e-12)
