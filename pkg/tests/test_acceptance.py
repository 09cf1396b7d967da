"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The backtest-ordering criterion runs a 20-seed, four-scenario desk
comparison and dominates the suite's runtime (several minutes).
"""

import time

import numpy as np
import pytest
import yaml

from netcoop.backtest import (
    BacktestConfig,
    SeedBundle,
    build_desk,
    compare_scenarios,
    run_scenario_on_desk,
)
from netcoop.coordination import (
    PlannerState,
    ProtocolParams,
    run_protocol,
    run_unreduced_admm,
    solve_net_update,
)
from netcoop.joint_solver import (
    JointProblem,
    evaluate_joint_objective,
    solve_joint_quadratic,
)
from netcoop.market_model import (
    CostModelParams,
    ScalingMatrix,
    compute_impact_coeffs,
    compute_scaling,
)
from netcoop.pm_oracle import (
    MarkowitzOracle,
    PMProblemData,
    QuadraticOracle,
    QuadraticPMData,
)
from netcoop.synthetic_market import (
    ALPHA_HORIZON,
    AUTOCORR_RANGE,
    CROSS_STRATEGY_CORR,
    IC_RANGE,
    N_RISK_FACTORS,
    AlphaGenConfig,
    AlphaGenState,
    MarketSpec,
    estimate_factor_model,
    solve_lyapunov,
)

# Desk calibration used by the ordering criteria: a market deep enough to
# trade in but shallow enough that impact costs matter, rebalanced on the
# alpha horizon.
DESK_MARKET = dict(volume_median=6e6)
DESK_REBALANCE_EVERY = 42


def _report(criterion: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion}: {status}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"{criterion}: {detail}"


def test_01_unreduced_admm_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    worst_dual_spread = 0.0
    for _ in range(10):
        m, n = 3, 5
        pms = [QuadraticPMData(rng.normal(0, 0.3, n)) for _ in range(m)]
        navs = rng.uniform(1, 5, m)
        cost = CostModelParams.from_impact(
            rng.uniform(0, 0.02, n), rng.uniform(0.1, 2.0, n), gamma_tc=0.5
        )
        params = ProtocolParams(
            scaling=compute_scaling(compute_impact_coeffs(cost)), n_rounds=50
        )
        res = run_protocol([QuadraticOracle(p) for p in pms], navs, params, cost)
        hist = run_unreduced_admm(pms, navs, params, cost, 50)
        for k, (rec, unrec) in enumerate(zip(res.transcript.rounds, hist)):
            worst = max(worst, np.abs(rec.z_sum - unrec.z_sum).max())
            subs = res.transcript.submissions(k)
            for i in range(m):
                worst = max(worst, np.abs(rec.u - unrec.u[i]).max())
                worst = max(worst, np.abs(subs[i] - unrec.x[i]).max())
            worst_dual_spread = max(
                worst_dual_spread, np.abs(unrec.u - unrec.u[0]).max()
            )
    elapsed = time.time() - t0
    _report(
        "1 unreduced-equivalence",
        worst <= 1e-8 and worst_dual_spread <= 1e-12 and elapsed <= 10,
        f"max iterate gap {worst:.2e}, dual spread {worst_dual_spread:.2e}, "
        f"{elapsed:.1f}s",
    )


def test_02_convergence_to_joint_optimum():
    rng = np.random.default_rng(102)
    t0 = time.time()
    worst = 0.0
    for _ in range(10):
        m, n = 4, 6
        pms = [QuadraticPMData(rng.normal(0, 0.3, n)) for _ in range(m)]
        navs = rng.uniform(1, 5, m)
        cost = CostModelParams.from_impact(
            np.zeros(n), rng.uniform(0.05, 1.0, n),
            gamma_tc=rng.uniform(0.1, 1.0), impact_power=2.0,
        )
        problem = JointProblem(pms, navs, cost)
        ref = solve_joint_quadratic(problem)
        params = ProtocolParams(
            scaling=compute_scaling(compute_impact_coeffs(cost)), n_rounds=500
        )
        res = run_protocol([QuadraticOracle(p) for p in pms], navs, params,
                           cost, record_messages=False)
        obj = evaluate_joint_objective(problem, res.trades)
        worst = max(worst, abs(obj - ref.objective))
    elapsed = time.time() - t0
    _report(
        "2 admm-joint-convergence",
        worst <= 1e-5 and elapsed <= 30,
        f"max objective gap {worst:.2e}, {elapsed:.1f}s",
    )


def _golden_section(f, a, b, iters=120):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def test_03_net_update_prox_correctness():
    rng = np.random.default_rng(103)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 6))
        rho = rng.uniform(0.5, 30)
        d = rng.uniform(0.05, 2.0)
        spread = rng.uniform(0, 0.05)
        impact = rng.uniform(0, 3.0)
        gamma_tc = rng.uniform(0.05, 2)
        gamma_short = rng.uniform(0, 2)
        r_rf = rng.uniform(0, 0.1)
        box_lo, box_hi = -rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)
        cost = CostModelParams.from_impact(
            [spread], [impact], gamma_tc=gamma_tc, gamma_short=gamma_short,
            r_rf=r_rf, net_box=(np.array([box_lo]), np.array([box_hi])),
        )
        holding = rng.normal(0, 0.3)
        u = rng.normal(0, 0.5)
        net = rng.normal(0, 0.5)
        state = PlannerState(u=np.array([u]), z_sum=np.zeros(1), n_pms=m,
                             holdings_net=np.array([holding]))
        params = ProtocolParams(scaling=ScalingMatrix([d]), rho=rho)
        z = solve_net_update(state, np.array([net]), params, cost)[0]

        sh = 0.5 * gamma_tc * spread
        im = gamma_tc * impact
        ss = gamma_short * r_rf

        def objective(t):
            psi = sh * abs(t) + im * abs(t) ** 1.5
            psi += ss * max(0.0, -(holding + t))
            return psi - u * d * t + rho / (2 * m) * d * d * (t - net) ** 2

        z_ref = min(max(_golden_section(objective, -1.0, 1.0), box_lo), box_hi)
        worst = max(worst, abs(z - z_ref))
    elapsed = time.time() - t0
    _report(
        "3 net-update-prox",
        worst <= 1e-7 and elapsed <= 5,
        f"max |z - golden| {worst:.2e}, {elapsed:.1f}s",
    )


def test_04_joint_dominance_every_rebalance():
    config = BacktestConfig(
        n_assets=30, n_pms=4, periods=500,
        rebalance_every=DESK_REBALANCE_EVERY,
    )
    desk = build_desk(config, SeedBundle.from_root(104),
                      market_spec=MarketSpec(**DESK_MARKET))
    gaps = []

    def on_rebalance(t, pm_problems, firm_cost, state, trades):
        problem = JointProblem(pm_problems, state.navs.copy(), firm_cost,
                               net_holdings=state.net_holdings)
        independent = [MarkowitzOracle(p).initial_solve() for p in pm_problems]
        joint_obj = evaluate_joint_objective(problem, list(trades))
        indep_obj = evaluate_joint_objective(problem, independent)
        gaps.append(joint_obj - indep_obj)

    run_scenario_on_desk(config, "full_cooperative", desk,
                         on_rebalance=on_rebalance)
    worst = max(gaps)
    _report(
        "4 joint-dominance",
        len(gaps) > 0 and worst <= 1e-8,
        f"{len(gaps)} rebalances, worst objective excess {worst:.2e}",
    )


def test_05_backtest_cost_ordering():
    scenarios = ["independent", "full_cooperative", "admm_2_iter",
                 "admm_5_iter"]
    config = BacktestConfig(n_assets=30, n_pms=4, periods=500,
                            rebalance_every=DESK_REBALANCE_EVERY)
    t0 = time.time()
    cmp = compare_scenarios(config, scenarios, list(range(20)),
                            market_spec=MarketSpec(**DESK_MARKET))
    elapsed = time.time() - t0

    mean_tc = {s: np.mean([r.firm_tc.sum() for r in cmp.results[s]])
               for s in scenarios}
    ordering = (
        mean_tc["full_cooperative"]
        <= mean_tc["admm_5_iter"]
        <= mean_tc["admm_2_iter"]
        <= mean_tc["independent"]
    )
    saving = 1.0 - mean_tc["full_cooperative"] / mean_tc["independent"]
    wins = total = 0
    for ri, rf in zip(cmp.results["independent"],
                      cmp.results["full_cooperative"]):
        for i in range(config.n_pms):
            total += 1
            wins += rf.pm_tc[:, i].sum() < ri.pm_tc[:, i].sum()
    _report(
        "5 backtest-ordering",
        ordering and saving >= 0.20 and wins >= 0.9 * total and elapsed <= 600,
        f"tc means {[f'{mean_tc[s]:,.0f}' for s in scenarios]}, "
        f"saving {saving:.0%}, per-PM {wins}/{total}, {elapsed/60:.1f} min",
    )


def test_06_ic_calibration():
    rng = np.random.default_rng(106)
    n, t_len = 8, 10_000
    sigma = np.diag(rng.uniform(0.001, 0.004, n))
    fwd = rng.multivariate_normal(np.zeros(n), sigma, size=t_len)
    config = AlphaGenConfig.sample(4, seed=106)
    from netcoop.synthetic_market import gen_alpha_paths

    alphas = gen_alpha_paths(config, fwd, sigma)
    worst_ic_err = 0.0
    for i, target in enumerate(config.target_ic):
        ic = np.corrcoef(alphas[i].ravel(), fwd.ravel())[0, 1]
        worst_ic_err = max(worst_ic_err, abs(ic - target))

    state = AlphaGenState.stationary(config, sigma, rng)
    path = np.empty((10_000, 4, n))
    for t in range(path.shape[0]):
        path[t] = state.step(rng)
    worst_ac_err = 0.0
    for i, phi in enumerate(config.temporal_autocorr):
        x = path[:, i, :]
        ac = (x[1:] * x[:-1]).sum(axis=0) / (x * x).sum(axis=0)
        worst_ac_err = max(worst_ac_err, np.abs(ac - phi).max())
    _report(
        "6 ic-calibration",
        worst_ic_err <= 0.02 and worst_ac_err <= 0.03,
        f"worst IC error {worst_ic_err:.3f}, worst lag-1 error {worst_ac_err:.3f}",
    )


def test_07_lyapunov_and_factor_recovery():
    from scipy.linalg import solve_discrete_lyapunov

    rng = np.random.default_rng(107)
    worst_resid = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 6))
        phi = np.diag(rng.uniform(0, 0.95, m))
        a = rng.normal(0, 1, (m, m))
        sigma_u = a @ a.T + 0.1 * np.eye(m)
        sigma_e = solve_discrete_lyapunov(phi, sigma_u)
        out = solve_lyapunov(phi, sigma_e)
        resid = np.abs(sigma_e - phi @ sigma_e @ phi.T - out).max()
        worst_resid = max(worst_resid, resid)

    t_len, n, j = 3000, 10, 3
    betas = rng.uniform(-1.5, 1.5, (j, n))
    factors = rng.uniform(-1.0, 1.0, (t_len, j))
    window = factors @ betas * 0.01
    fm = estimate_factor_model(window, j)
    sample_cov = np.cov(window, rowvar=False)
    rel = (np.linalg.norm(fm.covariance() - sample_cov)
           / np.linalg.norm(sample_cov))
    _report(
        "7 lyapunov-and-factor-recovery",
        worst_resid <= 1e-10 and rel <= 1e-6,
        f"worst Lyapunov residual {worst_resid:.2e}, "
        f"factor recovery rel error {rel:.2e}",
    )


def test_08_hyperparameter_conformance():
    protocol = ProtocolParams(scaling=ScalingMatrix([1.0]))
    backtest = BacktestConfig()
    kappa = np.array([0.08, 0.5, 1.3])
    scaling_ok = np.allclose(compute_scaling(kappa).d,
                             np.sqrt(2.0 * kappa), rtol=0, atol=0)
    pm_defaults = PMProblemData(
        alpha=np.zeros(2),
        factor_loadings=np.zeros((2, 1)),
        idio_var=np.zeros(2),
        r_rf=0.0,
        w_curr=np.zeros(2),
        c_curr=1.0,
        sigma_target=0.01,
        cost_params=CostModelParams.from_impact([0.0, 0.0], [0.1, 0.1]),
    )
    checks = {
        "rho": protocol.rho == 10.0,
        "varphi": protocol.varphi == 1.0,
        "scaling": scaling_ok,
        "L": backtest.leverage_limit == 1.5 and pm_defaults.leverage_limit == 1.5,
        "C": backtest.concentration_limit == 0.2
             and pm_defaults.concentration_limit == 0.2,
        "S": backtest.short_limit == 0.5 and pm_defaults.short_limit == 0.5,
        "T": backtest.turnover_limit == 0.2
             and pm_defaults.turnover_limit == 0.2,
        "gamma_risk": backtest.gamma_risk == 20.0
                      and pm_defaults.gamma_risk == 20.0,
        "gamma_turn": backtest.gamma_turn == 1.0
                      and pm_defaults.gamma_turn == 1.0,
        "gamma_tc": backtest.gamma_tc == 0.15 and pm_defaults.gamma_tc == 0.15,
        "gamma_short": backtest.gamma_short == 1.0
                       and pm_defaults.gamma_short == 1.0,
        "n_pms": backtest.n_pms == 4,
        "sigma_target_range": backtest.sigma_target_range == (0.06, 0.15),
        "nav_range": backtest.nav_log10_range == (6.5, 7.5),
        "universe_fraction": backtest.universe_fraction == 0.75,
        "n_risk_factors": backtest.n_risk_factors == 15
                          and N_RISK_FACTORS == 15,
        "ic_range": IC_RANGE == (0.06, 0.10)
                    and backtest.target_ic_range == (0.06, 0.10),
        "autocorr_range": AUTOCORR_RANGE == (0.75, 0.85)
                          and backtest.autocorr_range == (0.75, 0.85),
        "cross_corr": CROSS_STRATEGY_CORR == 0.3
                      and backtest.cross_corr == 0.3,
        "horizon": ALPHA_HORIZON == 42 and backtest.horizon == 42,
    }
    bad = [k for k, ok in checks.items() if not ok]
    _report("8 hyperparameter-conformance", not bad, f"mismatched: {bad}")


def test_09_determinism_byte_identical(tmp_path):
    from netcoop.cli import main

    tree = {
        "seed": 109,
        "output_dir": str(tmp_path / "out"),
        "market": {"n_assets": 10, "periods": 40, "volume_median": 6e6},
        "alphas": {"horizon": 10},
        "backtest": {"n_pms": 3, "rebalance_every": 5, "n_risk_factors": 3},
    }
    cfg = tmp_path / "config.yaml"
    cfg.write_text(yaml.safe_dump(tree))
    assert main(["generate", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--scenario", "admm_2_iter"]) == 0
    rundir = tmp_path / "out" / "admm_2_iter" / "seed_109"
    first = {p.name: p.read_bytes() for p in rundir.iterdir()}
    assert main(["run", "--config", str(cfg), "--scenario", "admm_2_iter"]) == 0
    second = {p.name: p.read_bytes() for p in rundir.iterdir()}
    ok = (set(first) == {"stats.csv", "series.csv", "transcript.jsonl"}
          and first == second)
    _report("9 determinism", ok,
            f"files {sorted(first)} byte-identical on re-run: {first == second}")
