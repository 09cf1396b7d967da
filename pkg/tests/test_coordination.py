import io
import json

import numpy as np
import pytest

from netcoop.coordination import (
    BroadcastSignal,
    PlannerState,
    ProtocolParams,
    RoundComplete,
    TradeSubmission,
    broadcast_signal,
    dual_update,
    initialize,
    message_to_json,
    run_protocol,
    run_unreduced_admm,
    solve_net_update,
    write_transcript_jsonl,
)
from netcoop.errors import InvalidParameterError, OracleFailureError
from netcoop.market_model import (
    CostModelParams,
    ScalingMatrix,
    compute_impact_coeffs,
    compute_scaling,
)
from netcoop.pm_oracle import PMOracle, QuadraticOracle, QuadraticPMData


def golden_section(f, a, b, iters=120):
    """Brute-force scalar minimizer for unimodal f on [a, b]."""
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


def quad_cost(kappa_spread, kappa_impact, **kw):
    return CostModelParams.from_impact(kappa_spread, kappa_impact, **kw)


def state_of(u, z_sum, m, holdings=None):
    return PlannerState(u=np.asarray(u, float), z_sum=np.asarray(z_sum, float),
                        n_pms=m, holdings_net=holdings)


def params_of(d, rho=10.0, varphi=1.0, k=1):
    return ProtocolParams(scaling=ScalingMatrix(d), rho=rho, varphi=varphi,
                          n_rounds=k)


class TestProtocolParams:
    def test_defaults(self):
        p = ProtocolParams(scaling=ScalingMatrix([1.0]))
        assert p.rho == 10.0 and p.varphi == 1.0

    def test_varphi_range(self):
        with pytest.raises(InvalidParameterError):
            ProtocolParams(scaling=ScalingMatrix([1.0]), varphi=1.62)
        with pytest.raises(InvalidParameterError):
            ProtocolParams(scaling=ScalingMatrix([1.0]), varphi=0.0)


class TestBroadcastSignal:
    def test_consensus_reached_gives_zero(self):
        st = state_of([0.0], [0.1], 2)
        ell = broadcast_signal(st, np.array([0.1]), params_of([1.0]))
        assert ell == pytest.approx([0.0])

    def test_hand_value(self):
        st = state_of([0.0], [0.09], 2)
        ell = broadcast_signal(st, np.array([0.1]), params_of([1.0]))
        assert ell == pytest.approx([0.05])

    def test_dual_offset_adds(self):
        st = state_of([0.02], [0.09], 2)
        ell = broadcast_signal(st, np.array([0.1]), params_of([1.0]))
        assert ell == pytest.approx([0.07])


class TestDualUpdate:
    def test_feasible_point_leaves_dual(self):
        st = state_of([0.3], [0.0], 2)
        u = dual_update(st, np.array([0.1]), np.array([0.1]), params_of([1.0]))
        assert u == pytest.approx([0.3])

    def test_hand_value(self):
        st = state_of([0.0], [0.0], 2)
        u = dual_update(st, np.array([0.1]), np.array([0.09]), params_of([1.0]))
        assert u == pytest.approx([0.05])

    def test_linear_in_varphi(self):
        st = state_of([0.1], [0.0], 3)
        u1 = dual_update(st, np.array([0.2]), np.array([0.05]),
                         params_of([1.0], varphi=0.5))
        u2 = dual_update(st, np.array([0.2]), np.array([0.05]),
                         params_of([1.0], varphi=1.0))
        assert (u2 - st.u) == pytest.approx(2 * (u1 - st.u))


class TestNetUpdate:
    def test_no_cost_closed_form(self):
        # z = net + M u / (rho d)
        cost = quad_cost([0.0], [0.0])
        st = state_of([0.2], [0.0], 3)
        z = solve_net_update(st, np.array([0.1]), params_of([1.0], rho=10.0), cost)
        assert z == pytest.approx([0.1 + 3 * 0.2 / 10.0])
        st0 = state_of([0.0], [0.0], 3)
        z0 = solve_net_update(st0, np.array([0.1]), params_of([1.0]), cost)
        assert z0 == pytest.approx([0.1])

    def test_spread_soft_threshold(self):
        cost = quad_cost([0.1], [0.0])  # gamma_tc * kappa/2 = 0.05
        st = state_of([0.0], [0.0], 2)
        z = solve_net_update(st, np.array([0.1]), params_of([1.0], rho=10.0), cost)
        assert z == pytest.approx([0.09])

    def test_matches_golden_section(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            m = int(rng.integers(1, 5))
            rho = rng.uniform(0.5, 30)
            d = rng.uniform(0.05, 2.0)
            cost = quad_cost(
                [rng.uniform(0, 0.05)],
                [rng.uniform(0, 3.0)],
                gamma_tc=rng.uniform(0.05, 2),
                gamma_short=rng.uniform(0, 2),
                r_rf=rng.uniform(0, 0.1),
                net_box=(np.array([-1.0]), np.array([1.0])),
            )
            holdings = np.array([rng.normal(0, 0.3)])
            st = state_of([rng.normal(0, 0.5)], [0.0], m, holdings=holdings)
            net = np.array([rng.normal(0, 0.5)])
            z = solve_net_update(st, net, params_of([d], rho=rho), cost)

            spread_half = 0.5 * cost.gamma_tc * cost.kappa_spread[0]
            imp = cost.gamma_tc * compute_impact_coeffs(cost)[0]
            ss = cost.gamma_short * cost.r_rf

            def objective(t):
                psi = spread_half * abs(t) + imp * abs(t) ** 1.5
                psi += ss * max(0.0, -(holdings[0] + t))
                return (psi - st.u[0] * d * t
                        + rho / (2 * m) * d * d * (t - net[0]) ** 2)

            z_ref = golden_section(objective, -1.0, 1.0)
            assert z[0] == pytest.approx(z_ref, abs=1e-7)

    def test_box_clipping(self):
        cost = quad_cost([0.0], [0.0], net_box=(np.array([-0.02]),
                                                np.array([0.02])))
        st = state_of([0.0], [0.0], 2)
        z = solve_net_update(st, np.array([0.5]), params_of([1.0]), cost)
        assert z == pytest.approx([0.02])

    def test_shorting_term_omitted_without_holdings(self):
        cost = quad_cost([0.0], [0.0], gamma_short=5.0, r_rf=0.1)
        st = state_of([0.0], [0.0], 2, holdings=None)
        z = solve_net_update(st, np.array([-0.3]), params_of([1.0]), cost)
        # without holdings the shorting slope must not bias the solution
        assert z == pytest.approx([-0.3])


def make_instance(rng, m=3, n=5, zero_cost=False, **cost_kw):
    pms = [QuadraticPMData(rng.normal(0, 0.3, n)) for _ in range(m)]
    navs = rng.uniform(1, 5, m)
    if zero_cost:
        cost = quad_cost(np.zeros(n), np.zeros(n))
    else:
        cost = quad_cost(rng.uniform(0, 0.02, n), rng.uniform(0.1, 2.0, n),
                         gamma_tc=0.5, **cost_kw)
    d = compute_scaling(compute_impact_coeffs(cost))
    return pms, navs, cost, d


class TestInitialize:
    def test_single_zero_target(self):
        cost = quad_cost(np.zeros(2), np.ones(2))
        params = params_of(np.ones(2))
        state, trades = initialize([QuadraticOracle(QuadraticPMData(np.zeros(2)))],
                                   [1.0], params, cost)
        assert np.all(trades[0] == 0) and np.all(state.z_sum == 0)
        assert np.all(state.u == 0)

    def test_nav_weights_normalize(self):
        rng = np.random.default_rng(5)
        pms, navs, cost, d = make_instance(rng)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(d.d, k=0), cost)
        assert res.nav_weights.sum() == pytest.approx(1.0)

    def test_zero_cost_z_sum_equals_net(self):
        rng = np.random.default_rng(6)
        pms, navs, cost, d = make_instance(rng, zero_cost=True)
        params = params_of(np.ones(5))
        oracles = [QuadraticOracle(p) for p in pms]
        state, trades = initialize(oracles, navs, params, cost)
        lam = navs / navs.sum()
        net = sum(l * t for l, t in zip(lam, trades))
        assert state.z_sum == pytest.approx(net)
        assert broadcast_signal(state, net, params) == pytest.approx(np.zeros(5))

    def test_oracle_failure_aborts(self):
        class FailingOracle(PMOracle):
            def initial_solve(self):
                raise OracleFailureError("boom")

            def admm_step(self, *a, **k):
                raise OracleFailureError("boom")

        cost = quad_cost(np.zeros(1), np.zeros(1))
        with pytest.raises(OracleFailureError, match="initial solve"):
            initialize([FailingOracle()], [1.0], params_of([1.0]), cost)


class TestRunProtocol:
    def test_k0_returns_initial_trades(self):
        rng = np.random.default_rng(7)
        pms, navs, cost, d = make_instance(rng)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(d.d, k=0), cost)
        for p, x in zip(pms, res.trades):
            assert x == pytest.approx(p.target)

    def test_zero_cost_is_fixed_point(self):
        rng = np.random.default_rng(8)
        pms, navs, cost, _ = make_instance(rng, zero_cost=True)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(np.ones(5), k=20), cost)
        for p, x in zip(pms, res.trades):
            assert np.abs(x - p.target).max() < 1e-8

    def test_converged_state_is_stationary(self):
        rng = np.random.default_rng(9)
        pms, navs, cost, d = make_instance(rng)
        oracles = [QuadraticOracle(p) for p in pms]
        res1 = run_protocol(oracles, navs, params_of(d.d, k=400), cost,
                            record_messages=False)
        res2 = run_protocol(oracles, navs, params_of(d.d, k=410), cost,
                            record_messages=False)
        for a, b in zip(res1.trades, res2.trades):
            assert np.abs(a - b).max() < 1e-9

    def test_residuals_mostly_decreasing(self):
        rng = np.random.default_rng(10)
        violations = total = 0
        for _ in range(5):
            pms, navs, cost, d = make_instance(rng)
            res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                               params_of(d.d, k=80), cost,
                               record_messages=False)
            resid = [np.linalg.norm(r.net - r.z_sum)
                     for r in res.transcript.rounds]
            for k in range(11, len(resid)):
                total += 1
                if resid[k] > resid[k - 1] + 1e-14:
                    violations += 1
        assert violations <= 0.05 * total

    def test_failure_mid_run_returns_last_round(self):
        class FlakyOracle(PMOracle):
            def __init__(self, target):
                self.data = QuadraticPMData(target)
                self.calls = 0

            def initial_solve(self):
                return self.data.target.copy()

            def admm_step(self, ell, x_prev, lam, rho, scaling):
                self.calls += 1
                if self.calls >= 3:
                    raise OracleFailureError("numerical trouble")
                from netcoop.pm_oracle import quadratic_admm_step
                return quadratic_admm_step(self.data, ell, x_prev, lam, rho,
                                           scaling)

        rng = np.random.default_rng(11)
        pms, navs, cost, d = make_instance(rng, m=1, n=3)
        oracle = FlakyOracle(pms[0].target)
        res = run_protocol([oracle], navs[:1], params_of(d.d, k=10), cost)
        assert res.failed and res.transcript.failed_round == 2
        # trades are those of the last completed round
        subs = res.transcript.submissions(2)
        assert res.trades[0] == pytest.approx(subs[0])


class TestConvergenceToJointOptimum:
    def test_full_cost_reaches_general_solver_objective(self):
        # nonsmooth net-trade cost: the reference comes from the conic
        # joint solver rather than the closed form
        from netcoop.joint_solver import (
            JointProblem,
            evaluate_joint_objective,
            solve_joint_general,
        )

        rng = np.random.default_rng(21)
        pms, navs, cost, d = make_instance(rng, m=3, n=5)
        problem = JointProblem(pms, navs, cost)
        ref = solve_joint_general(problem, trade_tie_break=0.0)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(d.d, k=500), cost,
                           record_messages=False)
        obj = evaluate_joint_objective(problem, res.trades)
        assert abs(obj - ref.objective) < 1e-5


class TestSignalIdentity:
    def test_broadcast_recomputes_bitwise(self):
        rng = np.random.default_rng(12)
        pms, navs, cost, d = make_instance(rng)
        params = params_of(d.d, k=25)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs, params, cost)
        rounds = res.transcript.rounds
        for prev, cur in zip(rounds[:-1], rounds[1:]):
            st = state_of(prev.u, prev.z_sum, len(pms))
            recomputed = broadcast_signal(st, prev.net, params)
            assert np.array_equal(recomputed, cur.ell)


class TestPrivacy:
    def test_messages_carry_only_trades_and_weights(self):
        rng = np.random.default_rng(13)
        pms, navs, cost, d = make_instance(rng)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(d.d, k=3), cost)
        for msg in res.transcript.messages:
            assert isinstance(msg, (TradeSubmission, BroadcastSignal,
                                    RoundComplete))
            if isinstance(msg, TradeSubmission):
                assert set(vars(msg)) == {"pm_id", "round", "weights",
                                          "nav_weight"}


class TestUnreducedEquivalence:
    def test_iterates_match_and_duals_collapse(self):
        rng = np.random.default_rng(14)
        for _ in range(3):
            pms, navs, cost, d = make_instance(rng, m=3, n=5)
            params = params_of(d.d, k=50)
            res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                               params, cost)
            hist = run_unreduced_admm(pms, navs, params, cost, 50)
            for k, (rec, unrec) in enumerate(zip(res.transcript.rounds, hist)):
                assert np.abs(rec.z_sum - unrec.z_sum).max() < 1e-8
                for i in range(3):
                    assert np.abs(rec.u - unrec.u[i]).max() < 1e-8
                subs = res.transcript.submissions(k)
                for i in range(3):
                    assert np.abs(subs[i] - unrec.x[i]).max() < 1e-8
                # per-PM duals stay equal when initialized equal
                assert np.abs(unrec.u - unrec.u[0]).max() < 1e-12

    def test_scaled_residual_constant_across_pms(self):
        rng = np.random.default_rng(15)
        pms, navs, cost, d = make_instance(rng, m=4, n=3)
        hist = run_unreduced_admm(pms, navs, params_of(d.d), cost, 20)
        for rec in hist:
            resid = d.d[None, :] * (rec.x_tilde - rec.z)
            assert np.abs(resid - resid[0]).max() < 1e-12

    def test_equivalence_with_masks_shorting_and_box(self):
        rng = np.random.default_rng(16)
        n = 4
        pms = [
            QuadraticPMData(rng.normal(0, 0.3, n), mask=rng.random(n) < 0.8)
            for _ in range(3)
        ]
        navs = rng.uniform(1, 4, 3)
        cost = quad_cost(
            rng.uniform(0, 0.02, n),
            rng.uniform(0.1, 1.5, n),
            gamma_tc=0.4,
            gamma_short=1.0,
            r_rf=0.02,
            net_box=(np.full(n, -0.1), np.full(n, 0.1)),
        )
        holdings = rng.normal(0, 0.05, n)
        d = compute_scaling(compute_impact_coeffs(cost))
        params = params_of(d.d, k=30)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs, params,
                           cost, holdings_net=holdings)
        hist = run_unreduced_admm(pms, navs, params, cost, 30,
                                  holdings_net=holdings)
        for k, (rec, unrec) in enumerate(zip(res.transcript.rounds, hist)):
            assert np.abs(rec.z_sum - unrec.z_sum).max() < 1e-8
            subs = res.transcript.submissions(k)
            for i in range(3):
                assert np.abs(rec.u - unrec.u[i]).max() < 1e-8
                assert np.abs(subs[i] - unrec.x[i]).max() < 1e-8


class TestTranscriptSerialization:
    def test_jsonl_round_trip(self):
        rng = np.random.default_rng(16)
        pms, navs, cost, d = make_instance(rng, m=2, n=3)
        res = run_protocol([QuadraticOracle(p) for p in pms], navs,
                           params_of(d.d, k=2), cost)
        buf = io.StringIO()
        write_transcript_jsonl(res.transcript, buf)
        lines = buf.getvalue().strip().split("\n")
        parsed = [json.loads(line) for line in lines]
        assert len(parsed) == len(res.transcript.messages)
        kinds = {p["type"] for p in parsed}
        assert kinds == {"trade_submission", "broadcast_signal",
                         "round_complete"}
        # doubles survive the 17-significant-digit rendering exactly
        for msg, rec in zip(res.transcript.messages, parsed):
            if rec["type"] == "trade_submission":
                assert np.array_equal(np.array(rec["weights"]), msg.weights)

    def test_period_tag(self):
        msg = RoundComplete(round=1)
        assert json.loads(message_to_json(msg, period=7)) == {
            "type": "round_complete", "period": 7, "round": 1,
        }
