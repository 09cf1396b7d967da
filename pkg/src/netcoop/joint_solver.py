"""Reference solver for the firm-level joint trading problem.

The firm problem couples the PMs' individual programs through the net trade:

    minimize    sum_i lam_i f_i(x_i) + firm net-trade costs(z)
    subject to  z = sum_i lam_i x_i   (plus an optional box on z)

where the firm costs are the gamma-scaled transaction cost of the net trade
and, when net holdings are tracked, the netted shorting cost of the
post-trade net position. For mean-variance PMs, ``f_i`` here consists of the
PM's return/slack terms and feasible set only: the PM's *own* net-cost
estimates are superseded by the firm-level terms, so with a single PM the
joint problem coincides with that PM's standalone program.

Two backends: a closed-form solver for all-quadratic instances with the
smooth quadratic cost (the exactly solvable oracle), and a general conic
backend through the solver port. This solver gathers all PM data in one
place; it exists as the idealized baseline and as a test oracle, and
deliberately ignores the privacy constraints the round-based protocol
preserves.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .errors import (
    DimensionError,
    InvalidParameterError,
    NumericalError,
    OracleFailureError,
)
from .market_model import (
    CostModelParams,
    compute_impact_coeffs,
    eval_short_cost,
    eval_tcost,
)
from .pm_oracle import (
    ConvexSolverPort,
    CvxpySolver,
    PMProblemData,
    QuadraticPMData,
)


@dataclass
class JointProblem:
    """PM problem list with NAV weights, firm cost spec and optional holdings.

    ``net_holdings`` are the firm's current net portfolio weights
    (NAV-weighted sum of PM holdings); when None the netted shorting term
    is omitted. The net box, if any, lives on ``firm_cost.net_box``.
    """

    pm_problems: list
    navs: np.ndarray
    firm_cost: CostModelParams
    net_holdings: np.ndarray | None = None

    def __post_init__(self):
        self.navs = np.asarray(self.navs, dtype=float)
        if len(self.pm_problems) == 0:
            raise InvalidParameterError("at least one PM problem required")
        if self.navs.shape != (len(self.pm_problems),):
            raise DimensionError("navs must have one entry per PM problem")
        if np.any(self.navs <= 0):
            raise InvalidParameterError("navs must be strictly positive")
        if self.net_holdings is not None:
            self.net_holdings = np.asarray(self.net_holdings, dtype=float)
            if self.net_holdings.shape != (self.firm_cost.n_assets,):
                raise DimensionError("net_holdings length mismatch")

    @property
    def nav_weights(self) -> np.ndarray:
        return self.navs / self.navs.sum()


@dataclass
class JointSolution:
    trades: list[np.ndarray]
    net_trade: np.ndarray
    objective: float
    pm_solutions: list | None = None


def solve_joint_quadratic(problem: JointProblem) -> JointSolution:
    """Closed-form joint solution for quadratic PMs with quadratic cost.

    Requires every PM to be quadratic and the firm cost to be the smooth
    quadratic form (no spread, ``impact_power == 2``, no shorting term, no
    box); then the stationarity system decouples per asset:

        z_j = abar_j / (1 + 2 gamma_tc kappa_j mu_j),
        x_i = mask_i * (a_i - 2 gamma_tc kappa * z)

    with ``abar = sum_i lam_i mask_i a_i`` and ``mu = sum_i lam_i mask_i``.
    """
    cost = problem.firm_cost
    if not all(isinstance(p, QuadraticPMData) for p in problem.pm_problems):
        raise InvalidParameterError("quadratic backend requires quadratic PMs")
    if cost.impact_power != 2.0:
        raise InvalidParameterError("quadratic backend requires impact_power == 2")
    if np.any(cost.kappa_spread != 0):
        raise InvalidParameterError("quadratic backend requires zero spread")
    if cost.net_box is not None:
        raise InvalidParameterError("quadratic backend does not handle a net box")
    if problem.net_holdings is not None and cost.gamma_short * cost.r_rf > 0:
        raise InvalidParameterError("quadratic backend has no shorting term")

    lam = problem.nav_weights
    kappa = compute_impact_coeffs(cost)
    g = cost.gamma_tc
    targets = np.stack([p.target for p in problem.pm_problems])
    masks = np.stack([p.mask for p in problem.pm_problems])

    abar = (lam[:, None] * np.where(masks, targets, 0.0)).sum(axis=0)
    mu = (lam[:, None] * masks).sum(axis=0)
    z = abar / (1.0 + 2.0 * g * kappa * mu)
    trades = [np.where(m, a - 2.0 * g * kappa * z, 0.0)
              for a, m in zip(targets, masks)]

    # stationarity residuals of the eliminated problem
    resid = 0.0
    for x, a, m, l in zip(trades, targets, masks, lam):
        grad = l * np.where(m, x - a + 2.0 * g * kappa * z, 0.0)
        resid = max(resid, float(np.max(np.abs(grad), initial=0.0)))
    net = sum(l * x for l, x in zip(lam, trades))
    resid = max(resid, float(np.max(np.abs(net - z))))
    if resid > 1e-10:
        raise NumericalError(f"joint quadratic KKT residual {resid:.3e}")

    obj = sum(
        l * 0.5 * float(np.sum(np.where(m, x - a, 0.0) ** 2))
        for l, x, a, m in zip(lam, trades, targets, masks)
    ) + g * float(z @ (kappa * z))
    return JointSolution(trades=trades, net_trade=z, objective=obj)


def _pm_core_objective_and_constraints(pm):
    """cvxpy objective/constraints of one PM inside the joint problem.

    Returns (trade expression, objective expression, constraints, extras).
    """
    if isinstance(pm, QuadraticPMData):
        x = cp.Variable(pm.target.shape[0])
        mask = pm.mask
        obj = 0.5 * cp.sum_squares(x[mask] - pm.target[mask])
        cons = [] if mask.all() else [x[~mask] == 0]
        return x, obj, cons, {"x": x}
    if isinstance(pm, PMProblemData):
        n = pm.n_assets
        w = cp.Variable(n)
        c = cp.Variable()
        z = cp.Variable(n)
        s_risk = cp.Variable(nonneg=True)
        s_turn = cp.Variable(nonneg=True)
        obj = (
            -pm.alpha @ w
            - pm.r_rf * c
            + pm.gamma_risk * s_risk
            + pm.gamma_turn * s_turn
        )
        risk = cp.norm(
            cp.hstack(
                [pm.factor_loadings.T @ w, cp.multiply(np.sqrt(pm.idio_var), w)]
            ),
            2,
        )
        cons = [
            w - pm.w_curr == z,
            1.0 - cp.sum(w) == c,
            cp.norm(w, 1) <= pm.leverage_limit,
            cp.abs(w) <= pm.concentration_limit,
            cp.sum(cp.pos(-w)) <= pm.short_limit,
            cp.norm(w - pm.w_curr, 2) + cp.abs(c - pm.c_curr)
            <= 2.0 * pm.turnover_limit + s_turn,
            risk <= pm.sigma_target + s_risk,
        ]
        if not pm.universe_mask.all():
            cons += [w[~pm.universe_mask] == 0, z[~pm.universe_mask] == 0]
        return z, obj, cons, {"w": w, "c": c, "z": z, "s_risk": s_risk,
                              "s_turn": s_turn}
    raise InvalidParameterError(f"unsupported PM problem type: {type(pm)!r}")


def solve_joint_general(
    problem: JointProblem,
    solver: ConvexSolverPort | None = None,
    trade_tie_break: float = 1e-7,
) -> JointSolution:
    """Solve the joint problem with the full cost model via the solver port.

    ``trade_tie_break`` scales a tiny linear (one-norm) penalty on the PM
    trades. Without it the problem is degenerate along churn directions:
    offsetting trades across PMs net to zero and cost the firm nothing, so
    the solver would return an arbitrary point of the optimal face. The
    kink makes zero churn strictly optimal; at the default magnitude
    (order 0.01 basis point per unit traded) it perturbs non-degenerate
    trades well below 1e-6. Churn needs a counterparty, so a single-PM
    problem gets no tie-break and the solve is exactly the PM's own
    program with the firm-level cost terms.
    """
    solver = solver if solver is not None else CvxpySolver()
    cost = problem.firm_cost
    lam = problem.nav_weights
    n = cost.n_assets
    if len(problem.pm_problems) == 1:
        trade_tie_break = 0.0

    objective = 0
    constraints = []
    trades = []
    extras = []
    for pm, l in zip(problem.pm_problems, lam):
        trade, obj, cons, ex = _pm_core_objective_and_constraints(pm)
        trades.append(trade)
        extras.append(ex)
        objective = objective + l * obj
        if trade_tie_break > 0:
            objective = objective + trade_tie_break * l * cp.norm(trade, 1)
        constraints += cons

    z_net = cp.Variable(n)
    constraints.append(z_net == sum(l * t for l, t in zip(lam, trades)))
    kappa = compute_impact_coeffs(cost)
    objective = objective + cost.gamma_tc * (
        0.5 * cost.kappa_spread @ cp.abs(z_net)
        + kappa @ cp.power(cp.abs(z_net), cost.impact_power)
    )
    if problem.net_holdings is not None:
        objective = objective + cost.gamma_short * cost.r_rf * cp.sum(
            cp.pos(-(problem.net_holdings + z_net))
        )
    if cost.net_box is not None:
        lo, hi = cost.net_box
        constraints += [z_net >= lo, z_net <= hi]

    prob = cp.Problem(cp.Minimize(objective), constraints)
    report = solver.solve(prob)
    if not report.certified:
        raise OracleFailureError(
            f"joint solve not certified optimal (status: {report.status})"
        )

    trade_values = []
    pm_solutions = []
    for pm, ex in zip(problem.pm_problems, extras):
        sol = {k: (np.asarray(v.value, dtype=float) if v.ndim else float(v.value))
               for k, v in ex.items()}
        key = "x" if isinstance(pm, QuadraticPMData) else "z"
        t = sol[key]
        mask = pm.mask if isinstance(pm, QuadraticPMData) else pm.universe_mask
        t[~mask] = 0.0
        if "w" in sol:
            sol["w"][~mask] = 0.0
        trade_values.append(t)
        pm_solutions.append(sol)
    return JointSolution(
        trades=trade_values,
        net_trade=np.asarray(z_net.value, dtype=float),
        objective=float(report.objective),
        pm_solutions=pm_solutions,
    )


def evaluate_joint_objective(
    problem: JointProblem, trades: list[np.ndarray], feas_tol: float = 1e-6
) -> float:
    """Evaluate the joint objective at a given stack of PM trades.

    Slack variables are set to their optimal values given the trades.
    Returns ``inf`` when a hard constraint is violated beyond ``feas_tol``.
    Used to compare trade stacks produced by different protocols under the
    identical firm-level criterion.
    """
    lam = problem.nav_weights
    cost = problem.firm_cost
    z_net = sum(l * np.asarray(t, dtype=float) for l, t in zip(lam, trades))

    total = 0.0
    for pm, t, l in zip(problem.pm_problems, trades, lam):
        t = np.asarray(t, dtype=float)
        if isinstance(pm, QuadraticPMData):
            if np.any(np.abs(t[~pm.mask]) > feas_tol):
                return float("inf")
            total += l * 0.5 * float(np.sum((t[pm.mask] - pm.target[pm.mask]) ** 2))
            continue
        w = pm.w_curr + t
        c = 1.0 - float(np.sum(w))
        if np.any(np.abs(t[~pm.universe_mask]) > feas_tol):
            return float("inf")
        if np.sum(np.abs(w)) > pm.leverage_limit + feas_tol:
            return float("inf")
        if np.max(np.abs(w), initial=0.0) > pm.concentration_limit + feas_tol:
            return float("inf")
        if np.sum(np.maximum(0.0, -w)) > pm.short_limit + feas_tol:
            return float("inf")
        risk = float(
            np.sqrt(
                np.sum((pm.factor_loadings.T @ w) ** 2)
                + np.sum(pm.idio_var * w**2)
            )
        )
        turn = float(np.linalg.norm(w - pm.w_curr)) + abs(c - pm.c_curr)
        s_risk = max(0.0, risk - pm.sigma_target)
        s_turn = max(0.0, turn - 2.0 * pm.turnover_limit)
        total += l * (
            -float(pm.alpha @ w)
            - pm.r_rf * c
            + pm.gamma_risk * s_risk
            + pm.gamma_turn * s_turn
        )

    if cost.net_box is not None:
        lo, hi = cost.net_box
        if np.any(z_net < lo - feas_tol) or np.any(z_net > hi + feas_tol):
            return float("inf")
    total += cost.gamma_tc * eval_tcost(z_net, cost)
    if problem.net_holdings is not None:
        total += cost.gamma_short * eval_short_cost(
            problem.net_holdings + z_net, cost.r_rf
        )
    return float(total)
