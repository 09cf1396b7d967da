"""Multi-period backtest of trade-coordination policies with firm accounting.

Each period, every PM (re)builds its single-period program from current
holdings, a shared forward-window risk model and its own alpha series, and
trades are obtained under one of four policies:

  * ``independent``: every PM solves its own program, no coordination;
  * ``full_cooperative``: the joint reference solver, gathering all data;
  * ``admm_2_iter`` / ``admm_5_iter`` (and ``admm_k:<K>``): the round-based
    coordination protocol with K rounds.

Execution charges the *unscaled* cost model on the executed net trade (the
objective-side gamma_tc is a tuning weight, not a realized cost), plus the
netted shorting cost on the post-trade net position. Costs are allocated to
PMs pro rata: transaction costs by per-asset gross trade participation,
shorting costs by per-asset short-position participation. Holdings then
drift with asset returns, cash accrues the risk-free rate, and weights are
renormalized against the new NAVs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, fmt12
from .coordination import (
    ProtocolParams,
    Transcript,
    run_protocol,
)
from .errors import (
    ComparisonMismatchError,
    ConfigError,
    DimensionError,
    InvalidParameterError,
    MissingInputError,
    NumericalError,
    OracleFailureError,
)
from .joint_solver import JointProblem, solve_joint_general
from .market_model import CostModelParams, compute_impact_coeffs, compute_scaling
from .pm_oracle import ConvexSolverPort, CvxpySolver, MarkowitzOracle, PMProblemData
from .synthetic_market import (
    ALPHA_HORIZON,
    AlphaGenConfig,
    FactorModel,
    MarketSeries,
    MarketSpec,
    N_RISK_FACTORS,
    estimate_factor_model,
    forward_window_returns,
    gen_alpha_paths,
    gen_market,
)

SCENARIO_INDEPENDENT = "independent"
SCENARIO_FULL = "full_cooperative"
_NAMED_SCENARIOS = (SCENARIO_INDEPENDENT, SCENARIO_FULL, "admm_2_iter", "admm_5_iter")
_ADMM_K_RE = re.compile(r"^admm_k:(\d+)$")

_ZERO_VOL_RTOL = 1e-12


def valid_scenario_names() -> str:
    return ", ".join(_NAMED_SCENARIOS) + ", admm_k:<K>"


def parse_scenario(name: str) -> tuple[str, int | None]:
    """Map a scenario name to (kind, rounds); rounds is None unless admm."""
    if name == SCENARIO_INDEPENDENT or name == SCENARIO_FULL:
        return name, None
    if name == "admm_2_iter":
        return "admm", 2
    if name == "admm_5_iter":
        return "admm", 5
    m = _ADMM_K_RE.match(name)
    if m:
        return "admm", int(m.group(1))
    raise ConfigError(
        f"unknown scenario {name!r}; valid names: {valid_scenario_names()}"
    )


@dataclass
class BacktestConfig:
    """Desk configuration: sizes, per-PM draws, program and protocol knobs."""

    n_assets: int = 30
    n_pms: int = 4
    periods: int = 500
    rebalance_every: int = 1
    universe_fraction: float = 0.75
    sigma_target_range: tuple = (0.06, 0.15)  # annualized
    nav_log10_range: tuple = (6.5, 7.5)
    leverage_limit: float = 1.5
    concentration_limit: float = 0.2
    short_limit: float = 0.5
    turnover_limit: float = 0.2
    gamma_risk: float = 20.0
    gamma_turn: float = 1.0
    gamma_tc: float = 0.15
    gamma_short: float = 1.0
    impact_coeff: float = 1.0
    n_risk_factors: int = N_RISK_FACTORS
    horizon: int = ALPHA_HORIZON
    cross_corr: float = 0.3
    target_ic_range: tuple = (0.06, 0.10)
    autocorr_range: tuple = (0.75, 0.85)
    rho: float = 10.0
    varphi: float = 1.0
    periods_per_year: int = 252
    max_flagged_fraction: float = 0.05

    def __post_init__(self):
        if self.n_assets < 1 or self.n_pms < 1 or self.periods < 1:
            raise InvalidParameterError("n_assets, n_pms, periods must be >= 1")
        if self.rebalance_every < 1:
            raise InvalidParameterError("rebalance_every must be >= 1")
        if not 0 < self.universe_fraction <= 1:
            raise InvalidParameterError("universe_fraction must lie in (0, 1]")


@dataclass
class SeedBundle:
    """The three independent seeds a scenario run depends on."""

    market: int
    alpha: int
    assignment: int

    @classmethod
    def from_root(cls, seed: int) -> "SeedBundle":
        children = np.random.SeedSequence(seed).spawn(3)
        return cls(*(int(c.generate_state(1)[0]) for c in children))


@dataclass
class DeskAssignment:
    """Static per-PM draws: initial NAVs, risk targets, tradable universes."""

    navs0: np.ndarray
    sigma_targets_annual: np.ndarray
    universe_masks: np.ndarray  # (M, N) bool

    @classmethod
    def sample(cls, config: BacktestConfig, seed: int) -> "DeskAssignment":
        rng = np.random.default_rng(seed)
        m, n = config.n_pms, config.n_assets
        navs0 = 10.0 ** rng.uniform(*config.nav_log10_range, size=m)
        sigmas = rng.uniform(*config.sigma_target_range, size=m)
        k = max(1, int(round(config.universe_fraction * n)))
        masks = np.zeros((m, n), dtype=bool)
        for i in range(m):
            masks[i, rng.choice(n, size=k, replace=False)] = True
        return cls(navs0=navs0, sigma_targets_annual=sigmas, universe_masks=masks)


@dataclass
class DeskData:
    """Shared inputs of one comparison: market, alphas, assignment, models."""

    market: MarketSeries
    alphas: np.ndarray  # (M, T_alpha, N)
    alpha_config: AlphaGenConfig
    assignment: DeskAssignment
    seeds: SeedBundle
    risk_models: dict[int, FactorModel] = field(default_factory=dict)


def build_desk(
    config: BacktestConfig,
    seeds: SeedBundle,
    market_spec: MarketSpec | None = None,
    market: MarketSeries | None = None,
    alphas: np.ndarray | None = None,
) -> DeskData:
    """Generate (or accept) the inputs shared by all scenarios of one seed."""
    if market is None:
        market = gen_market(
            config.n_assets,
            config.periods + config.horizon,
            spec=market_spec,
            seed=seeds.market,
        )
    rng = np.random.default_rng(seeds.alpha)
    alpha_config = AlphaGenConfig(
        target_ic=rng.uniform(*config.target_ic_range, size=config.n_pms),
        temporal_autocorr=rng.uniform(*config.autocorr_range, size=config.n_pms),
        cross_corr=config.cross_corr,
        horizon=config.horizon,
        seed=seeds.alpha,
    )
    if alphas is None:
        fwd = forward_window_returns(market.returns, config.horizon)
        sigma_asset = np.atleast_2d(np.cov(fwd, rowvar=False, ddof=1))
        alphas = gen_alpha_paths(alpha_config, fwd, sigma_asset)
    assignment = DeskAssignment.sample(config, seeds.assignment)
    return DeskData(
        market=market,
        alphas=alphas,
        alpha_config=alpha_config,
        assignment=assignment,
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------


@dataclass
class AccountState:
    """Per-PM weights, cash and NAVs; the firm NAV is their sum."""

    weights: np.ndarray  # (M, N), fractions of each PM's NAV
    cash: np.ndarray  # (M,)
    navs: np.ndarray  # (M,) currency

    @property
    def firm_nav(self) -> float:
        return float(self.navs.sum())

    @property
    def nav_weights(self) -> np.ndarray:
        return self.navs / self.navs.sum()

    @property
    def net_holdings(self) -> np.ndarray:
        return self.nav_weights @ self.weights

    @classmethod
    def initial(cls, navs0: np.ndarray, n_assets: int) -> "AccountState":
        m = navs0.shape[0]
        return cls(
            weights=np.zeros((m, n_assets)),
            cash=np.ones(m),
            navs=np.asarray(navs0, dtype=float).copy(),
        )


@dataclass
class PeriodCosts:
    """Realized currency costs of one period, firm level and per PM."""

    firm_tc: float
    firm_short: float
    pm_tc: np.ndarray
    pm_short: np.ndarray


def step_period(
    state: AccountState,
    trades: np.ndarray,
    asset_returns: np.ndarray,
    r_rf: float,
    firm_cost: CostModelParams,
) -> tuple[AccountState, PeriodCosts]:
    """Execute trades, charge realized costs, drift holdings one period.

    The net trade is costed with the unscaled model at the firm's NAV;
    shorting cost applies to the post-trade net short weights. Per-asset
    costs are split across PMs pro rata by gross participation (trades for
    transaction costs, short positions for shorting costs); PMs with zero
    participation in an asset bear none of its cost.
    """
    trades = np.asarray(trades, dtype=float)
    lam = state.nav_weights
    firm_nav = state.firm_nav
    z = lam @ trades

    kappa_impact = compute_impact_coeffs(firm_cost)
    tc_asset = firm_nav * (
        0.5 * firm_cost.kappa_spread * np.abs(z)
        + kappa_impact * np.abs(z) ** firm_cost.impact_power
    )
    w_post = state.weights + trades
    net_post = lam @ w_post
    short_asset = firm_nav * r_rf * np.maximum(0.0, -net_post)

    part_tc = lam[:, None] * np.abs(trades)
    denom_tc = part_tc.sum(axis=0)
    share_tc = np.divide(
        part_tc, denom_tc[None, :], out=np.zeros_like(part_tc),
        where=denom_tc[None, :] > 0,
    )
    part_sh = lam[:, None] * np.maximum(0.0, -w_post)
    denom_sh = part_sh.sum(axis=0)
    share_sh = np.divide(
        part_sh, denom_sh[None, :], out=np.zeros_like(part_sh),
        where=denom_sh[None, :] > 0,
    )
    pm_tc = share_tc @ tc_asset
    pm_short = share_sh @ short_asset

    holdings = state.weights * state.navs[:, None]
    cash = state.cash * state.navs
    holdings = holdings + trades * state.navs[:, None]
    cash = cash - trades.sum(axis=1) * state.navs
    cash = cash - pm_tc - pm_short
    holdings = holdings * (1.0 + np.asarray(asset_returns, dtype=float))[None, :]
    cash = cash * (1.0 + r_rf)
    navs_new = holdings.sum(axis=1) + cash
    if np.any(navs_new <= 0):
        broke = np.flatnonzero(navs_new <= 0).tolist()
        raise NumericalError(f"NAV went nonpositive for PM(s) {broke}")
    new_state = AccountState(
        weights=holdings / navs_new[:, None],
        cash=cash / navs_new,
        navs=navs_new,
    )
    return new_state, PeriodCosts(
        firm_tc=float(tc_asset.sum()),
        firm_short=float(short_asset.sum()),
        pm_tc=pm_tc,
        pm_short=pm_short,
    )


# ---------------------------------------------------------------------------
# Performance statistics
# ---------------------------------------------------------------------------


@dataclass
class PerformanceStats:
    """Annualized return/volatility and Sharpe (None when vol is zero)."""

    ann_return: float
    ann_volatility: float
    sharpe: float | None


def compute_stats(
    nav_series: np.ndarray,
    r_rf_series: np.ndarray,
    periods_per_year: int = 252,
) -> PerformanceStats:
    """Arithmetic annualization of a NAV path against a risk-free series."""
    nav = np.asarray(nav_series, dtype=float)
    if nav.ndim != 1 or nav.shape[0] < 3:
        raise DimensionError("nav series must cover at least two periods")
    r = nav[1:] / nav[:-1] - 1.0
    rf = np.asarray(r_rf_series, dtype=float)
    if rf.shape != r.shape:
        raise DimensionError("r_rf series must have one entry per period")
    ann_return = float(r.mean() * periods_per_year)
    ann_vol = float(r.std(ddof=0) * np.sqrt(periods_per_year))
    if ann_vol <= _ZERO_VOL_RTOL * (1.0 + abs(ann_return)):
        sharpe = None
    else:
        sharpe = float((ann_return - rf.mean() * periods_per_year) / ann_vol)
    return PerformanceStats(ann_return=ann_return, ann_volatility=ann_vol,
                            sharpe=sharpe)


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    """NAV paths, cost ledgers and metadata of one scenario run."""

    scenario: str
    config: BacktestConfig
    seeds: SeedBundle | None
    pm_nav: np.ndarray  # (P+1, M)
    firm_nav: np.ndarray  # (P+1,)
    pm_tc: np.ndarray  # (P, M) currency
    pm_short: np.ndarray  # (P, M)
    firm_tc: np.ndarray  # (P,)
    firm_short: np.ndarray  # (P,)
    r_rf: np.ndarray  # (P,)
    flagged_periods: list[int]
    transcripts: list[tuple[int, Transcript]]
    trade_log: list[tuple[int, np.ndarray]]  # rebalance period -> (M, N)

    def entity_names(self) -> list[str]:
        return ["firm"] + [f"pm_{i + 1}" for i in range(self.pm_nav.shape[1])]

    def nav_series(self, entity: str) -> np.ndarray:
        if entity == "firm":
            return self.firm_nav
        return self.pm_nav[:, int(entity.removeprefix("pm_")) - 1]

    def cost_series(self, entity: str) -> np.ndarray:
        if entity == "firm":
            return self.firm_tc
        return self.pm_tc[:, int(entity.removeprefix("pm_")) - 1]

    def stats(self, entity: str) -> PerformanceStats:
        return compute_stats(
            self.nav_series(entity), self.r_rf, self.config.periods_per_year
        )


def build_rebalance_inputs(
    config: BacktestConfig,
    market: MarketSeries,
    alphas: np.ndarray,
    assignment: DeskAssignment,
    risk_model: FactorModel,
    t: int,
    state: AccountState,
) -> tuple[list[PMProblemData], CostModelParams]:
    """PM problem data and the firm cost model for the rebalance at ``t``.

    Every PM costs its own trading with its own current NAV; the firm model
    uses the total NAV. Volatilities come from the risk model diagonal,
    volumes and spreads from the market snapshot at ``t``.
    """
    n = config.n_assets
    nu = risk_model.vols
    b = np.full(n, config.impact_coeff)
    common = dict(
        kappa_spread=market.spreads[t],
        b=b,
        nu=nu,
        omega=market.volumes[t],
        gamma_tc=config.gamma_tc,
        gamma_short=config.gamma_short,
        r_rf=float(market.r_rf[t]),
    )
    pm_problems = []
    for i in range(config.n_pms):
        pm_problems.append(
            PMProblemData(
                alpha=alphas[i, t],
                factor_loadings=risk_model.loadings,
                idio_var=risk_model.idio_var,
                r_rf=float(market.r_rf[t]),
                w_curr=state.weights[i],
                c_curr=float(state.cash[i]),
                sigma_target=assignment.sigma_targets_annual[i]
                / np.sqrt(config.periods_per_year),
                cost_params=CostModelParams(nav=float(state.navs[i]), **common),
                leverage_limit=config.leverage_limit,
                concentration_limit=config.concentration_limit,
                short_limit=config.short_limit,
                turnover_limit=config.turnover_limit,
                gamma_risk=config.gamma_risk,
                gamma_turn=config.gamma_turn,
                gamma_tc=config.gamma_tc,
                gamma_short=config.gamma_short,
                universe_mask=assignment.universe_masks[i],
            )
        )
    firm_cost = CostModelParams(nav=state.firm_nav, **common)
    return pm_problems, firm_cost


def run_scenario(
    config: BacktestConfig,
    scenario: str,
    market: MarketSeries,
    alphas: np.ndarray,
    assignment: DeskAssignment,
    risk_models: dict[int, FactorModel] | None = None,
    solver: ConvexSolverPort | None = None,
    seeds: SeedBundle | None = None,
    on_rebalance=None,
) -> ScenarioResult:
    """Simulate one scenario over ``config.periods`` periods.

    ``risk_models`` may carry precomputed factor models keyed by rebalance
    period (they are deterministic in the market, so sharing them across
    scenarios is both a speedup and an exactness guarantee).
    ``on_rebalance(t, pm_problems, firm_cost, state, trades)`` is called
    after each rebalance decision; it exists for inspection hooks such as
    the ex-ante dominance checks.

    A solver failure at a rebalance falls back to zero trades for that
    period and flags it; more than ``max_flagged_fraction`` of rebalances
    flagged fails the whole run.
    """
    kind, k_rounds = parse_scenario(scenario)
    m, n, periods = config.n_pms, config.n_assets, config.periods
    if market.n_assets != n:
        raise DimensionError("market asset count differs from config")
    if market.n_periods < periods + config.horizon - 1:
        raise MissingInputError(
            f"market covers {market.n_periods} periods; "
            f"{periods + config.horizon - 1} needed (periods + horizon - 1)"
        )
    if alphas.shape[0] != m or alphas.shape[1] < periods or alphas.shape[2] != n:
        raise MissingInputError("alpha series do not cover the configured run")

    solver = solver if solver is not None else CvxpySolver()
    risk_models = {} if risk_models is None else risk_models
    oracles = None  # built at the first rebalance, reused thereafter

    state = AccountState.initial(assignment.navs0, n)
    pm_nav = np.empty((periods + 1, m))
    firm_nav = np.empty(periods + 1)
    pm_tc = np.zeros((periods, m))
    pm_short = np.zeros((periods, m))
    firm_tc = np.zeros(periods)
    firm_short = np.zeros(periods)
    pm_nav[0] = state.navs
    firm_nav[0] = state.firm_nav

    flagged: list[int] = []
    transcripts: list[tuple[int, Transcript]] = []
    trade_log: list[tuple[int, np.ndarray]] = []
    n_rebalances = 0
    firm_cost_last = None

    for t in range(periods):
        rebalance = t % config.rebalance_every == 0
        if rebalance:
            n_rebalances += 1
            fm = risk_models.get(t)
            if fm is None:
                fm = estimate_factor_model(
                    market.returns[t : t + config.horizon], config.n_risk_factors
                )
                risk_models[t] = fm
            pm_problems, firm_cost = build_rebalance_inputs(
                config, market, alphas, assignment, fm, t, state
            )
            firm_cost_last = firm_cost
            trades = np.zeros((m, n))
            try:
                if kind == SCENARIO_INDEPENDENT:
                    if oracles is None:
                        oracles = [MarkowitzOracle(p, solver) for p in pm_problems]
                    else:
                        for o, p in zip(oracles, pm_problems):
                            o.set_data(p)
                    for i, o in enumerate(oracles):
                        trades[i] = o.initial_solve()
                elif kind == SCENARIO_FULL:
                    jp = JointProblem(
                        pm_problems,
                        state.navs,
                        firm_cost,
                        net_holdings=state.net_holdings,
                    )
                    sol = solve_joint_general(jp, solver)
                    trades = np.stack(sol.trades)
                else:  # admm
                    if oracles is None:
                        oracles = [MarkowitzOracle(p, solver) for p in pm_problems]
                    else:
                        for o, p in zip(oracles, pm_problems):
                            o.set_data(p)
                    params = ProtocolParams(
                        scaling=compute_scaling(compute_impact_coeffs(firm_cost)),
                        rho=config.rho,
                        varphi=config.varphi,
                        n_rounds=k_rounds,
                    )
                    res = run_protocol(
                        oracles,
                        state.navs,
                        params,
                        firm_cost,
                        holdings_net=state.net_holdings,
                    )
                    trades = np.stack(res.trades)
                    transcripts.append((t, res.transcript))
                    if res.failed:
                        flagged.append(t)
            except OracleFailureError:
                trades = np.zeros((m, n))
                flagged.append(t)
            trade_log.append((t, trades.copy()))
            if on_rebalance is not None:
                on_rebalance(t, pm_problems, firm_cost, state, trades)
        else:
            trades = np.zeros((m, n))
            # keep charging realized costs of standing positions
            firm_cost = firm_cost_last

        state, costs = step_period(
            state, trades, market.returns[t], float(market.r_rf[t]), firm_cost
        )
        pm_nav[t + 1] = state.navs
        firm_nav[t + 1] = state.firm_nav
        pm_tc[t] = costs.pm_tc
        pm_short[t] = costs.pm_short
        firm_tc[t] = costs.firm_tc
        firm_short[t] = costs.firm_short

    if len(flagged) > config.max_flagged_fraction * n_rebalances:
        raise NumericalError(
            f"{len(flagged)} of {n_rebalances} rebalances failed "
            f"(limit {config.max_flagged_fraction:.0%}); periods: {flagged}"
        )
    return ScenarioResult(
        scenario=scenario,
        config=config,
        seeds=seeds,
        pm_nav=pm_nav,
        firm_nav=firm_nav,
        pm_tc=pm_tc,
        pm_short=pm_short,
        firm_tc=firm_tc,
        firm_short=firm_short,
        r_rf=market.r_rf[:periods].copy(),
        flagged_periods=flagged,
        transcripts=transcripts,
        trade_log=trade_log,
    )


def run_scenario_on_desk(
    config: BacktestConfig,
    scenario: str,
    desk: DeskData,
    solver: ConvexSolverPort | None = None,
    on_rebalance=None,
) -> ScenarioResult:
    return run_scenario(
        config,
        scenario,
        desk.market,
        desk.alphas,
        desk.assignment,
        risk_models=desk.risk_models,
        solver=solver,
        seeds=desk.seeds,
        on_rebalance=on_rebalance,
    )


# ---------------------------------------------------------------------------
# Scenario comparison and CSV emission
# ---------------------------------------------------------------------------


@dataclass
class ComparisonResult:
    """Results of all (scenario, seed) runs on shared desk inputs."""

    scenarios: list[str]
    seeds: list[int]
    results: dict[str, list[ScenarioResult]]  # scenario -> per-seed results

    def seed_mean_firm_tc(self, scenario: str) -> float:
        return float(
            np.mean([r.firm_tc.sum() for r in self.results[scenario]])
        )


def check_common_seeds(results: list[ScenarioResult]) -> None:
    """Raise unless all results were produced from identical seed bundles."""
    bundles = {
        (r.seeds.market, r.seeds.alpha, r.seeds.assignment)
        if r.seeds is not None
        else None
        for r in results
    }
    if len(bundles) != 1 or None in bundles:
        raise ComparisonMismatchError(
            "scenario results do not share market/alpha/assignment seeds"
        )


def compare_scenarios(
    config: BacktestConfig,
    scenarios: list[str],
    seeds: list[int],
    market_spec: MarketSpec | None = None,
    solver: ConvexSolverPort | None = None,
) -> ComparisonResult:
    """Run every scenario on identical desk inputs for each seed."""
    for s in scenarios:
        parse_scenario(s)
    results: dict[str, list[ScenarioResult]] = {s: [] for s in scenarios}
    for seed in seeds:
        desk = build_desk(config, SeedBundle.from_root(seed), market_spec)
        per_seed = []
        for s in scenarios:
            res = run_scenario_on_desk(config, s, desk, solver=solver)
            results[s].append(res)
            per_seed.append(res)
        check_common_seeds(per_seed)
    return ComparisonResult(scenarios=list(scenarios), seeds=list(seeds),
                            results=results)


def _stats_row(result: ScenarioResult, entity: str) -> dict:
    stats = result.stats(entity)
    nav = result.nav_series(entity)
    cost = result.cost_series(entity)
    return {
        "scenario": result.scenario,
        "entity": entity,
        "return": stats.ann_return,
        "volatility": stats.ann_volatility,
        "sharpe": stats.sharpe,
        "cum_tcost": float(cost.sum()),
        "cum_tcost_frac": float((cost / nav[:-1]).sum()),
    }


def stats_rows(results: list[ScenarioResult]) -> list[dict]:
    rows = []
    for r in results:
        for entity in r.entity_names():
            rows.append(_stats_row(r, entity))
    return rows


_STATS_HEADER = (
    "scenario,entity,return,volatility,sharpe,cum_tcost,cum_tcost_frac"
)


def write_stats_csv(results: list[ScenarioResult], path) -> Path:
    """Stats table, one row per (scenario, firm|pm), deterministic order."""
    lines = [_STATS_HEADER]
    for row in stats_rows(results):
        sharpe = "" if row["sharpe"] is None else fmt12(row["sharpe"])
        lines.append(
            f'{row["scenario"]},{row["entity"]},{fmt12(row["return"])},'
            f'{fmt12(row["volatility"])},{sharpe},{fmt12(row["cum_tcost"])},'
            f'{fmt12(row["cum_tcost_frac"])}'
        )
    return atomic_write_text(path, "\n".join(lines) + "\n")


_SERIES_HEADER = (
    "scenario,entity,period,nav,cum_return,cum_tcost,cum_tcost_frac"
)


def write_series_csv(results: list[ScenarioResult], path) -> Path:
    """Per-period NAV and cumulative cost paths in long format."""
    lines = [_SERIES_HEADER]
    for r in results:
        for entity in r.entity_names():
            nav = r.nav_series(entity)
            cost = r.cost_series(entity)
            cum_cost = np.concatenate([[0.0], np.cumsum(cost)])
            cum_frac = np.concatenate([[0.0], np.cumsum(cost / nav[:-1])])
            for p in range(nav.shape[0]):
                lines.append(
                    f"{r.scenario},{entity},{p},{fmt12(nav[p])},"
                    f"{fmt12(nav[p] / nav[0] - 1.0)},{fmt12(cum_cost[p])},"
                    f"{fmt12(cum_frac[p])}"
                )
    return atomic_write_text(path, "\n".join(lines) + "\n")
