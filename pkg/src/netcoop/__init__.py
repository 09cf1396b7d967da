"""netcoop: cooperative transaction-cost mitigation for multi-PM firms.

A firm whose portfolio managers trade independently can net their trade
lists and execute only the aggregate, but the managers still size their
trades as if alone. This package implements a round-based coordination
protocol in which a central planner broadcasts a per-asset price signal
derived from the netted trades, each manager re-solves their own problem
with that signal and a proximal anchor, and the iterates approach the trades
that are jointly optimal for the firm. Alongside the protocol it provides
the joint reference solver, synthetic market/alpha generation, and a
multi-period backtest comparing coordination policies.
"""

from .market_model import (
    CostModelParams,
    ScalingMatrix,
    compute_impact_coeffs,
    compute_scaling,
    eval_short_cost,
    eval_tcost,
    net_cost_derivative,
)
from .pm_oracle import (
    ConvexSolverPort,
    CvxpySolver,
    MarkowitzOracle,
    PMOracle,
    PMProblemData,
    QuadraticOracle,
    QuadraticPMData,
    markowitz_initial_solve,
    quadratic_initial_solve,
)
from .coordination import (
    PlannerState,
    ProtocolParams,
    ProtocolResult,
    run_protocol,
    run_unreduced_admm,
)
from .joint_solver import (
    JointProblem,
    JointSolution,
    evaluate_joint_objective,
    solve_joint_general,
    solve_joint_quadratic,
)
from .synthetic_market import (
    AlphaGenConfig,
    FactorModel,
    MarketSeries,
    MarketSpec,
    calibrate_ic,
    estimate_factor_model,
    forward_window_returns,
    gen_alpha_paths,
    gen_market,
    solve_lyapunov,
)
from .backtest import (
    BacktestConfig,
    ScenarioResult,
    compare_scenarios,
    compute_stats,
    run_scenario,
)

__version__ = "0.1.0"
