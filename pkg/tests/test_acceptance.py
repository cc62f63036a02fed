"""Acceptance suite: every exit criterion at its stated tolerance, one
printed pass/fail line per criterion.

The workhorse test system is the two-dimensional isotropic model A = 0,
R = S = I (fixed point I), started at the fixed point so scaling responses
are purely noise-driven; systems are varied where a criterion demands it.
"""

import csv
import json
import math

import numpy as np

from riccdiff import cli, dyson, enkf, matcore, mc, riccati

from conftest import random_psd, random_spd, random_sym

SEED = 20240810


def verdict(cid: str, ok: bool, detail: str) -> None:
    print(f"criterion {cid}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {cid}: {detail}"


def flat_system(kappa=1, eps=0.0):
    return riccati.ModelParams(A=np.zeros((2, 2)), R=np.eye(2), S=np.eye(2),
                               kappa=kappa, varpi=0.0, eps=eps)


# -- 1. scalar oracle -----------------------------------------------------------

def test_c01_scalar_tanh_oracle():
    params = riccati.scalar_params(0.0, 1.0, 1.0)
    flow = riccati.integrate_det_flow(np.array([[0.0]]), 5.0, 1e-3, params,
                                      record_stride=50)
    err = max(abs(p[0, 0] - math.tanh(t)) for t, p in zip(flow.grid, flow.P))
    verdict("01 scalar-oracle", err <= 1e-8, f"max abs err {err:.3e} <= 1e-8")


# -- 2. fixed point -------------------------------------------------------------

def test_c02_fixed_point_randomized():
    rng = np.random.default_rng(SEED)
    worst_res, worst_absc, worst_gap = 0.0, -np.inf, 0.0
    n_done = 0
    while n_done < 10:
        r = int(rng.integers(1, 7))
        params = riccati.ModelParams(
            A=rng.standard_normal((r, r)) / math.sqrt(r),
            R=random_spd(rng, r), S=random_spd(rng, r))
        if not (params.stabilizable and params.detectable):
            continue
        n_done += 1
        p_n = riccati.solve_fixed_point(params, "newton")
        p_s = riccati.solve_fixed_point(params, "schur")
        res = riccati.care_residual(p_n, params) / (1 + np.linalg.norm(p_n)**2)
        worst_res = max(worst_res, res)
        worst_absc = max(worst_absc,
                         matcore.spectral_abscissa(params.A - p_n @ params.S))
        worst_gap = max(worst_gap, float(np.linalg.norm(p_n - p_s, 2)))
    ok = worst_res <= 1e-10 and worst_absc < 0 and worst_gap <= 1e-8
    verdict("02 fixed-point", ok,
            f"residual {worst_res:.2e}, Absc {worst_absc:.3f}, "
            f"solver gap {worst_gap:.2e}")


# -- 3. under-bias ---------------------------------------------------------------

def test_c03_under_bias():
    params = flat_system(eps=0.3)
    q0 = np.eye(2)  # the fixed point, so phi_t(Q0) = I exactly
    times = [0.5, 1.0, 2.0, 5.0]
    batch = riccati.simulate_batch(params, q0, times, 1e-3, 10_000, SEED)
    ref = riccati.integrate_det_flow(q0, 5.0, 1e-3, params, record_stride=500)
    worst = np.inf
    for j, t in enumerate(times):
        idx = int(np.argmin(np.abs(ref.grid - t)))
        lam, se = mc.loewner_min_slack(ref.P[idx], batch.Q[:, j])
        worst = min(worst, lam + 3 * se)
    verdict("03 under-bias", worst >= 0,
            f"min over t of lam_min + 3 SE = {worst:.3e} >= 0")


# -- 4. bias scaling --------------------------------------------------------------

def test_c04_bias_scaling():
    params = flat_system()
    eps_grid = [0.05, 0.1, 0.2, 0.4]
    fit = mc.bias_curve(params, np.eye(2), 2.0, eps_grid, 100_000, SEED,
                        dt=1e-3)
    ok_slope = abs(fit.slope - 2.0) <= max(0.3, 2 * fit.slope_stderr)
    ok_sign = np.all(fit.extras["lam_min"]
                     >= -3 * fit.extras["lam_min_stderr"])
    ok_div = np.all(fit.extras["diverged_fraction"] == 0.0)
    assert np.all(fit.extras["floor_rate"] < 0.01)
    # Richardson gate at the largest noise level: the dt bias must not be
    # resolvable against the statistical error
    half = riccati.simulate_batch(params.with_eps(0.4), np.eye(2), [2.0],
                                  5e-4, 100_000, SEED + 1, purpose="c04:half")
    ref_half = mc.euler_reference(params, np.eye(2), [2.0], 5e-4)[-1]
    resp_half = np.linalg.norm(ref_half - half.Q[:, -1].mean(axis=0), 2)
    sl = [half.Q[s:s + 5000, -1].mean(axis=0) for s in range(0, 100_000, 5000)]
    se_half = np.std([np.linalg.norm(ref_half - m, 2) for m in sl],
                     ddof=1) / math.sqrt(len(sl))
    gap = abs(fit.responses[-1] - resp_half)
    lim = 3 * math.hypot(fit.response_stderrs[-1], se_half)
    ok_rich = gap <= lim
    verdict("04 bias-scaling", ok_slope and ok_sign and ok_div and ok_rich,
            f"slope {fit.slope:.3f} +- {fit.slope_stderr:.3f} (target 2 +- 0.3), "
            f"Loewner sign {'ok' if ok_sign else 'violated'}, "
            f"Richardson gap {gap:.2e} <= {lim:.2e}")


# -- 5. fluctuation scaling --------------------------------------------------------

def test_c05_fluctuation_scaling():
    detail = []
    ok = True
    for kappa in (1, 0):
        params = flat_system(kappa=kappa)
        fit = mc.fluctuation_curve(params, np.eye(2), 2.0, 2,
                                   [0.05, 0.1, 0.2, 0.4], 20_000,
                                   SEED + kappa, dt=1e-3)
        assert np.all(fit.extras["floor_rate"] < 0.01)
        ok_k = abs(fit.slope - 1.0) <= max(0.2, 2 * fit.slope_stderr)
        profile = mc.fluctuation_time_profile(
            params.with_eps(0.2), np.eye(2), [1.0, 2.0, 5.0, 10.0], 2,
            20_000, SEED + 10 + kappa, dt=1e-3)
        vals = list(profile.values())
        ratio = max(vals) / min(vals)
        ok_t = ratio <= 1.3
        ok = ok and ok_k and ok_t
        detail.append(f"kappa={kappa}: slope {fit.slope:.3f} "
                      f"+- {fit.slope_stderr:.3f}, t-ratio {ratio:.3f}")
    verdict("05 fluctuation-scaling", ok, "; ".join(detail))


# -- 6. Liouville identity ----------------------------------------------------------

def test_c06_liouville_identity():
    params = flat_system(eps=0.3)
    times = np.arange(1, 11) * 0.2
    batch = riccati.simulate_batch(params, np.eye(2), times, 2.5e-4, 100,
                                   SEED, track_e=True)
    worst = 0.0
    for j in range(len(times)):
        sign, logabs = np.linalg.slogdet(batch.E[:, j])
        assert np.all(sign > 0)
        rel = np.abs(logabs - batch.logdet[:, j]) / (
            1.0 + np.abs(batch.logdet[:, j]))
        worst = max(worst, float(rel.max()))
    verdict("06 liouville", worst <= 1e-6,
            f"max pathwise rel gap {worst:.2e} <= 1e-6 "
            f"(100 paths, dt=2.5e-4, T=2)")


# -- 7. determinant decay -------------------------------------------------------------

def test_c07_det_decay():
    detail = []
    ok = True
    cases = [
        (riccati.scalar_params(0.0, 1.0, 1.0, kappa=1, eps=0.2), np.eye(1)),
        (flat_system(eps=0.1), np.eye(2)),
    ]
    for params, q0 in cases:
        batch = riccati.simulate_batch(params, q0, [5.0], 1e-3, 10_000,
                                       SEED, track_e=True)
        dec = mc.det_decay_rate(batch, 2, params, q0)
        ok_c = dec.rate >= dec.bound - 3 * dec.rate_stderr
        ok = ok and ok_c
        detail.append(f"r={params.dim}: rate {dec.rate:.4f} >= "
                      f"{dec.bound:.4f} - 3*{dec.rate_stderr:.4f}")
    # eps = 0 from the fixed point: exact rate
    params0 = flat_system(eps=0.0)
    pinf = riccati.solve_fixed_point(params0)
    b0 = riccati.simulate_batch(params0, pinf, [5.0], 1e-3, 4, SEED,
                                track_e=True)
    dec0 = mc.det_decay_rate(b0, 1, params0, pinf)
    target = -float(np.trace(params0.A - pinf @ params0.S))
    ok_exact = (abs(dec0.rate - target) <= 1e-8
                and dec0.rate >= math.sqrt(np.trace(params0.R @ params0.S))
                - 1e-10)
    ok = ok and ok_exact
    detail.append(f"eps=0 exact gap {abs(dec0.rate - target):.1e}")
    verdict("07 det-decay", ok, "; ".join(detail))


# -- 8. Dyson equivalence -------------------------------------------------------------

def test_c08_dyson_equivalence():
    lam0 = np.array([2.0, 0.5])
    params = riccati.ModelParams(A=np.eye(2), R=np.eye(2), S=np.eye(2),
                                 kappa=1, varpi=0.0, eps=0.5)
    batch = riccati.simulate_batch(params, np.diag(lam0), [1.0], 1e-3,
                                   10_000, SEED, purpose="c08:matrix")
    lam_mat = np.linalg.eigvalsh(batch.Q[:, -1])[:, ::-1]
    a, rr, ss, uu, vv = dyson.isotropic_coefficients(params)
    ep = dyson.simulate_isotropic_eigenvalues(
        a, rr, ss, uu, vv, r=2, eps=0.5, t_final=1.0, dt=1e-3, seed=SEED,
        lam0=lam0, n_paths=10_000, t_grid=[1.0])
    ks = [mc.ks_distance(lam_mat[:, i], ep.lambdas[:, -1, i])
          for i in range(2)]
    verdict("08 dyson-equivalence", max(ks) <= 0.05,
            f"KS distances {ks[0]:.4f}, {ks[1]:.4f} <= 0.05 "
            f"(10^4 samples each)")


# -- 9. Dyson drift regression ---------------------------------------------------------

def test_c09_dyson_drift_regression():
    params = riccati.ModelParams(A=np.diag([1.0, -1.0]), R=np.eye(2),
                                 S=np.eye(2), kappa=1, eps=0.3)
    paths = [riccati.simulate_path(np.diag([2.0, 0.5]), 2.0, 1e-3, params,
                                   seed=SEED + s) for s in range(100)]
    reg = dyson.eigen_drift_diagnostic(paths, params)
    ok = abs(reg.slope - 1.0) <= 0.15
    verdict("09 dyson-drift", ok,
            f"slope {reg.slope:.3f} +- {reg.slope_stderr:.3f} "
            f"(target 1 +- 0.15, n={reg.n_used})")


# -- 10. EnKF <-> Riccati correspondence -------------------------------------------------

def test_c10_enkf_correspondence():
    model = enkf.FilterModel(A=np.array([[0.1, 0.2], [0.0, -0.3]]),
                             B=np.eye(2), R1=np.eye(2), R2=np.eye(2))
    n_part = 100
    eps, _ = enkf.ensemble_eps(n_part)
    t_grid = [1.0, 3.0]
    fr = enkf.run_filters(model, n_part, t_grid, 1e-3, n_runs=1000,
                          seed=SEED, flavor=2, exact_init=True)
    params = model.riccati_params(kappa=0, eps=eps)
    twin = riccati.simulate_batch(params, np.eye(2), t_grid, 1e-3, 4000,
                                  SEED + 1, purpose="c10:riccati")
    ok = True
    detail = []
    for j, t in enumerate(t_grid):
        tr_f = mc.traces(fr.P_hat[:, j])
        tr_r = mc.traces(twin.Q[:, j])
        for moment in (1, 2):
            mf, sf, _ = mc.batch_means(tr_f**moment)
            mr, sr, _ = mc.batch_means(tr_r**moment)
            gap = abs(mf - mr)
            lim = 3 * math.hypot(sf, sr)
            ok = ok and gap <= lim
            detail.append(f"t={t:g},m{moment}: {gap:.4f}<={lim:.4f}")
    # Kalman consistency at N = 2000 over 20 seeds
    fr2 = enkf.run_filters(model, 2000, [3.0], 1e-3, n_runs=20, seed=SEED + 2,
                           flavor=2, exact_init=True)
    flow = riccati.integrate_det_flow(
        np.eye(2), 3.0, 1e-3, model.riccati_params(kappa=0),
        record_stride=10**9)
    gap2 = float(np.mean([np.linalg.norm(p - flow.P[-1], 2)
                          for p in fr2.P_hat[:, -1]]))
    lim2 = 5.0 / math.sqrt(2000)
    ok = ok and gap2 <= lim2
    detail.append(f"kalman {gap2:.4f}<={lim2:.4f}")
    verdict("10 enkf-correspondence", ok, "; ".join(detail))


# -- 11. stationarity ---------------------------------------------------------------------

def test_c11_stationarity():
    params = riccati.scalar_params(1.0, 1.0, 1.0, kappa=1, eps=0.3)
    grid = [0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0]
    curve = mc.stationarity_diagnostic(params, np.array([[0.1]]),
                                       np.array([[5.0]]), grid, 10_000, SEED)
    ok_dist = curve.distances[-1] <= 0.05
    after = curve.grid >= 1.0
    dd = curve.distances[after]
    ss = curve.stderrs[after]
    ok_mono = all(dd[k + 1] <= dd[k] + 2 * math.hypot(ss[k], ss[k + 1])
                  for k in range(len(dd) - 1))
    verdict("11 stationarity", ok_dist and ok_mono,
            f"W1(T=15) = {curve.distances[-1]:.4f} <= 0.05, "
            f"monotone after t=1: {ok_mono}")


# -- 12. semigroup stability ---------------------------------------------------------------

def test_c12_semigroup_stability():
    params = riccati.ModelParams(A=np.diag([0.2, -0.3]), R=np.eye(2),
                                 S=np.eye(2), kappa=0, eps=0.05)
    pinf = riccati.solve_fixed_point(params)
    mu_half = 0.5 * matcore.log_norm(params.A - pinf @ params.S)
    assert mu_half < 0
    batch = riccati.simulate_batch(params, pinf, [20.0], 1e-3, 1000, SEED,
                                   track_e=True)
    stats = mc.lyapunov_exponent(batch)
    frac = stats.fraction_below(mu_half)
    verdict("12 semigroup-stability", frac >= 0.95,
            f"fraction below mu/2 = {frac:.3f} >= 0.95 "
            f"(mu/2 = {mu_half:.3f}, t=20, 10^3 paths)")


# -- 13. inequality suites ------------------------------------------------------------------

def test_c13_inequality_suites():
    rng = np.random.default_rng(SEED)
    checks = {}

    slack = -1e-10
    worst = 0.0
    for _ in range(500):
        r = int(rng.integers(1, 5))
        p = random_spd(rng, r)
        rr, ss = random_psd(rng, r), random_psd(rng, r)
        lhs = np.trace(np.linalg.inv(p) @ rr + p @ ss)
        rhs = 2.0 * math.sqrt(max(np.trace(rr @ ss), 0.0))
        worst = min(worst, lhs - rhs)
    checks["trace"] = worst >= slack

    worst = 0.0
    for _ in range(200):
        worst = min(worst, matcore.hw_gap(random_sym(rng, 4),
                                          random_sym(rng, 4)))
    checks["hoffman-wielandt"] = worst >= slack

    worst = 0.0
    for _ in range(200):
        q1, q2 = random_spd(rng, 3), random_spd(rng, 3)
        w = np.linalg.eigvalsh(matcore.sym_tensor_embed(q1, q2))
        lo = np.linalg.eigvalsh(q1)[0] * np.linalg.eigvalsh(q2)[0]
        hi = np.linalg.eigvalsh(q1)[-1] * np.linalg.eigvalsh(q2)[-1]
        worst = min(worst, w[0] - lo, hi - w[-1])
    checks["tensor-bracket"] = worst >= slack

    params = riccati.ModelParams(A=np.zeros((3, 3)), R=np.eye(3),
                                 S=random_spd(rng, 3), kappa=1, varpi=0.5,
                                 eps=0.3)
    worst = 0.0
    for _ in range(200):
        x = random_spd(rng, 3, scale=2.0)
        gap = params.U + x @ params.V @ x - riccati.sigma_map(x, params)
        worst = min(worst, matcore.min_eig(gap))
    checks["sigma-envelope"] = worst >= slack

    worst = 0.0
    for _ in range(200):
        z = random_spd(rng, 3)
        gap = (riccati.inverse_drift_bound(z, params)
               - riccati.inverse_drift_exact(z, params))
        worst = min(worst, matcore.min_eig(gap))
    checks["inverse-drift"] = worst >= slack

    # threshold sign flips on a grid
    p2 = riccati.ModelParams(A=np.zeros((2, 2)), R=np.eye(2), S=np.eye(2),
                             kappa=1, varpi=0.4)
    thr = riccati.thresholds(p2, 3)
    flips_ok = True
    for value, cond in (
        (thr.eps0, lambda e: min(
            matcore.min_eig(p2.R - e**2 / 4 * 3 * p2.U),
            matcore.min_eig(p2.S - e**2 / 4 * 3 * p2.V)) >= -1e-12),
        (thr.eps_n_V, lambda e: e**2 / 2 * 2 * 2
         * np.linalg.eigvalsh(p2.V)[-1] < np.linalg.eigvalsh(p2.S)[0]),
    ):
        grid = np.linspace(0.5 * value, 1.5 * value, 201)
        flips = [a for a, b in zip(grid[:-1], grid[1:])
                 if cond(a) != cond(b)]
        flips_ok = flips_ok and len(flips) == 1 and \
            abs(flips[0] - value) <= (grid[1] - grid[0]) + 1e-12
    checks["threshold-scan"] = flips_ok

    ok = all(checks.values())
    verdict("13 inequality-suites", ok,
            ", ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items()))


# -- 14. determinism ---------------------------------------------------------------------------

def test_c14_determinism(tmp_path):
    cfg = {
        "schema_version": 1,
        "experiment": "bias",
        "model": {"r": 2, "A": 0.0, "R": 1.0, "S": 1.0, "kappa": 1,
                  "varpi": 0.0, "eps": 0.3},
        "run": {"T": 0.5, "dt": 1e-3, "n_paths": 2000, "seed": 11,
                "eps_grid": [0.1, 0.2, 0.3, 0.4]},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    tables = []
    for name, threads in (("t1", "1"), ("t2", "2"), ("t1b", "1")):
        out = tmp_path / name
        rc = cli.main(["bias", "--config", str(p), "--out", str(out),
                       "--threads", threads])
        assert rc == 0
        with open(out / "results.csv") as fh:
            rows = [row[:6] for row in csv.reader(fh)]  # strip wall/fingerprint
        tables.append(rows)
    ok = tables[0] == tables[1] == tables[2]
    verdict("14 determinism", ok,
            "byte-identical numeric output across reruns and thread counts")
