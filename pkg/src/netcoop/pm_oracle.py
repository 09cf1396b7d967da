"""Portfolio-manager subproblem solvers.

Every PM is modeled as an oracle with two entry points:

  * ``initial_solve()``: the PM's own optimal trade, ``argmin f(x)``;
  * ``admm_step(ell, x_prev, lam, rho, D)``: the coordination-round update

        argmin_x  lam * f(x) + lam * ell' D x
                  + (rho/2) ||lam * D (x - x_prev)||^2

    i.e. the PM's own problem plus a linear price-adjustment term and a
    quadratic stability penalty around the previous trade list.

Two oracle families are provided: a closed-form quadratic oracle used in
tests and protocol verification, and a full mean-variance oracle whose
single-period program (expected return, risk and turnover slack penalties,
leverage/concentration/shorting/turnover/risk constraints, own transaction
and shorting cost estimates) is solved through a conic solver port.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .errors import DimensionError, InvalidParameterError, OracleFailureError
from .market_model import CostModelParams, ScalingMatrix, compute_impact_coeffs


class PMOracle(abc.ABC):
    """Behavior contract of a portfolio manager inside the protocol."""

    @abc.abstractmethod
    def initial_solve(self) -> np.ndarray:
        """The PM's unilaterally optimal trade weights."""

    @abc.abstractmethod
    def admm_step(
        self,
        ell: np.ndarray,
        x_prev: np.ndarray,
        nav_weight: float,
        rho: float,
        scaling: ScalingMatrix,
    ) -> np.ndarray:
        """One coordination-round re-solve with signal and proximal terms."""


# ---------------------------------------------------------------------------
# Quadratic test oracle
# ---------------------------------------------------------------------------


@dataclass
class QuadraticPMData:
    """Data of the closed-form oracle ``f(x) = (1/2)||x - target||^2``.

    The objective is restricted to the tradable subspace: coordinates with
    ``mask`` False are forced to zero in every output.
    """

    target: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if self.target.ndim != 1:
            raise DimensionError("target must be a vector")
        if self.mask is None:
            self.mask = np.ones(self.target.shape[0], dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.target.shape:
                raise DimensionError("mask and target lengths differ")


def quadratic_initial_solve(data: QuadraticPMData) -> np.ndarray:
    """Unconstrained minimizer: the target, with masked coordinates zeroed."""
    return np.where(data.mask, data.target, 0.0)


def quadratic_admm_step(
    data: QuadraticPMData,
    ell: np.ndarray,
    x_prev: np.ndarray,
    nav_weight: float,
    rho: float,
    scaling: ScalingMatrix,
) -> np.ndarray:
    """Closed-form coordination step of the quadratic oracle.

    Per tradable coordinate,

        x_j = (a_j - ell_j d_j + rho lam d_j^2 x_prev_j) / (1 + rho lam d_j^2).
    """
    if nav_weight <= 0 or rho <= 0:
        raise InvalidParameterError("nav_weight and rho must be > 0")
    ell = np.asarray(ell, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    d = scaling.d
    if ell.shape != data.target.shape or x_prev.shape != data.target.shape:
        raise DimensionError("ell / x_prev length mismatch")
    w = rho * nav_weight * d**2
    x = (data.target - ell * d + w * x_prev) / (1.0 + w)
    return np.where(data.mask, x, 0.0)


class QuadraticOracle(PMOracle):
    """Stateful wrapper around :class:`QuadraticPMData`."""

    def __init__(self, data: QuadraticPMData):
        self.data = data

    def initial_solve(self) -> np.ndarray:
        return quadratic_initial_solve(self.data)

    def admm_step(self, ell, x_prev, nav_weight, rho, scaling) -> np.ndarray:
        return quadratic_admm_step(self.data, ell, x_prev, nav_weight, rho, scaling)


# ---------------------------------------------------------------------------
# Convex solver port
# ---------------------------------------------------------------------------


@dataclass
class SolveReport:
    """Outcome of one conic solve: status, value and certification."""

    status: str
    objective: float | None
    certified: bool


class ConvexSolverPort(abc.ABC):
    """Backend for the structured convex programs the oracles build.

    Implementations must either certify the returned primal point (duality
    gap within the backend's configured tolerance) or report failure.
    """

    @abc.abstractmethod
    def solve(self, problem: cp.Problem) -> SolveReport: ...


class CvxpySolver(ConvexSolverPort):
    """Conic backend based on cvxpy.

    The default engine is Clarabel, whose termination criteria bound the
    duality gap by the configured tolerances before it reports an optimal
    status; any other status is returned uncertified. Solves run at a tight
    tolerance first; if the solver stalls short of it, one retry at
    ``gap_tol`` (still certificate-grade) is attempted before reporting
    failure.
    """

    def __init__(self, solver: str = "CLARABEL", gap_tol: float = 1e-7, **options):
        self.solver = solver
        self.gap_tol = gap_tol
        self.options = options
        self._retry_options = None
        if solver == "CLARABEL":
            self.options.setdefault("tol_gap_rel", min(1e-9, gap_tol))
            self.options.setdefault("tol_gap_abs", 1e-9)
            self.options.setdefault("tol_feas", 1e-9)
            if self.options["tol_gap_rel"] < gap_tol:
                self._retry_options = dict(
                    self.options,
                    tol_gap_rel=gap_tol,
                    tol_gap_abs=gap_tol,
                    tol_feas=min(1e-8, gap_tol),
                )

    def _attempt(self, problem: cp.Problem, options: dict) -> SolveReport:
        try:
            with warnings.catch_warnings():
                # inaccurate solves surface as uncertified reports (and a
                # retry), not as user-facing warnings
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=self.solver, **options)
        except cp.error.SolverError as exc:
            return SolveReport(status=f"solver_error: {exc}", objective=None,
                              certified=False)
        certified = problem.status == cp.OPTIMAL
        value = None if problem.value is None else float(problem.value)
        return SolveReport(status=problem.status, objective=value,
                          certified=certified)

    def solve(self, problem: cp.Problem) -> SolveReport:
        report = self._attempt(problem, self.options)
        if not report.certified and self._retry_options is not None:
            report = self._attempt(problem, self._retry_options)
        return report


# ---------------------------------------------------------------------------
# Mean-variance (Markowitz) oracle
# ---------------------------------------------------------------------------


@dataclass
class PMProblemData:
    """All data of one PM's single-period program.

    ``alpha`` is the expected-return vector over the alpha horizon;
    ``factor_loadings`` (N x J) and ``idio_var`` define the risk model
    ``Sigma = F F' + diag(idio_var)``; ``sigma_target`` is per rebalance
    period, in the same units as the risk model. ``cost_params`` carries the
    PM's own transaction-cost estimate (impact built from the PM's own NAV).
    The zero-trade point is always feasible: slack variables absorb risk and
    turnover violations.
    """

    alpha: np.ndarray
    factor_loadings: np.ndarray
    idio_var: np.ndarray
    r_rf: float
    w_curr: np.ndarray
    c_curr: float
    sigma_target: float
    cost_params: CostModelParams
    leverage_limit: float = 1.5
    concentration_limit: float = 0.2
    short_limit: float = 0.5
    turnover_limit: float = 0.2
    gamma_risk: float = 20.0
    gamma_turn: float = 1.0
    gamma_tc: float = 0.15
    gamma_short: float = 1.0
    universe_mask: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        n = self.alpha.shape[0]
        self.factor_loadings = np.atleast_2d(np.asarray(self.factor_loadings, float))
        self.idio_var = np.asarray(self.idio_var, dtype=float)
        self.w_curr = np.asarray(self.w_curr, dtype=float)
        if self.factor_loadings.shape[0] != n:
            raise DimensionError("factor_loadings must have one row per asset")
        if self.idio_var.shape != (n,) or self.w_curr.shape != (n,):
            raise DimensionError("idio_var / w_curr length mismatch")
        if np.any(self.idio_var < 0):
            raise InvalidParameterError("idio_var must be nonnegative")
        if self.universe_mask is None:
            self.universe_mask = np.ones(n, dtype=bool)
        else:
            self.universe_mask = np.asarray(self.universe_mask, dtype=bool)
            if self.universe_mask.shape != (n,):
                raise DimensionError("universe_mask length mismatch")
        if self.cost_params.n_assets != n:
            raise DimensionError("cost_params dimension mismatch")
        if self.concentration_limit <= 0:
            raise InvalidParameterError("concentration_limit must be > 0")
        if self.leverage_limit < 0 or self.short_limit < 0 or self.turnover_limit < 0:
            raise InvalidParameterError("L, S, T must be >= 0")
        if self.sigma_target < 0:
            raise InvalidParameterError("sigma_target must be >= 0")
        for name in ("gamma_risk", "gamma_turn", "gamma_tc", "gamma_short"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be > 0")

    @property
    def n_assets(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_factors(self) -> int:
        return self.factor_loadings.shape[1]


@dataclass
class MarkowitzSolution:
    """Primal solution of the PM program (plus the solve report)."""

    w: np.ndarray
    c: float
    z: np.ndarray
    s_risk: float
    s_turn: float
    objective: float
    report: SolveReport


class MarkowitzOracle(PMOracle):
    """Mean-variance PM oracle backed by a parameterized conic program.

    The program is compiled once per (N, J, universe mask, impact power)
    structure; per-period data and the coordination-round terms enter as
    cvxpy Parameters, so repeated solves inside a backtest skip
    canonicalization.
    """

    def __init__(self, data: PMProblemData, solver: ConvexSolverPort | None = None):
        self.solver = solver if solver is not None else CvxpySolver()
        self._signature = None
        self.last_solution: MarkowitzSolution | None = None
        self.set_data(data)

    # -- problem construction -------------------------------------------

    def _structure(self, data: PMProblemData):
        return (
            data.n_assets,
            data.n_factors,
            data.universe_mask.tobytes(),
            data.cost_params.impact_power,
        )

    def _build(self, data: PMProblemData) -> None:
        n, j = data.n_assets, data.n_factors
        mask = data.universe_mask
        self._mask = mask

        w = cp.Variable(n, name="w")
        c = cp.Variable(name="c")
        z = cp.Variable(n, name="z")
        s_risk = cp.Variable(nonneg=True, name="s_risk")
        s_turn = cp.Variable(nonneg=True, name="s_turn")

        p = {}
        p["alpha"] = cp.Parameter(n)
        p["r_rf"] = cp.Parameter()
        p["w_curr"] = cp.Parameter(n)
        p["c_curr"] = cp.Parameter()
        p["loadings"] = cp.Parameter((n, j))
        p["idio_sd"] = cp.Parameter(n, nonneg=True)
        p["sigma_target"] = cp.Parameter(nonneg=True)
        p["gamma_risk"] = cp.Parameter(nonneg=True)
        p["gamma_turn"] = cp.Parameter(nonneg=True)
        p["spread_half"] = cp.Parameter(n, nonneg=True)  # gamma_tc * kappa_s / 2
        p["impact"] = cp.Parameter(n, nonneg=True)  # gamma_tc * kappa_impact
        p["short_coeff"] = cp.Parameter(nonneg=True)  # gamma_short * r_rf
        p["lev"] = cp.Parameter(nonneg=True)
        p["conc"] = cp.Parameter(nonneg=True)
        p["short_lim"] = cp.Parameter(nonneg=True)
        p["turn_lim2"] = cp.Parameter(nonneg=True)  # 2 * T
        # coordination-round terms (zero for the initial solve)
        p["lin"] = cp.Parameter(n)  # lam * D ell
        p["prox_w"] = cp.Parameter(n, nonneg=True)  # sqrt(rho) * lam * D
        p["prox_anchor"] = cp.Parameter(n)  # prox_w * x_prev

        power = data.cost_params.impact_power
        objective = (
            -p["alpha"] @ w
            - p["r_rf"] * c
            + p["gamma_risk"] * s_risk
            + p["gamma_turn"] * s_turn
            + p["spread_half"] @ cp.abs(z)
            + p["impact"] @ cp.power(cp.abs(z), power)
            + p["short_coeff"] * cp.sum(cp.pos(-w))
            + p["lin"] @ z
            + 0.5 * cp.sum_squares(cp.multiply(p["prox_w"], z) - p["prox_anchor"])
        )
        risk = cp.norm(
            cp.hstack([p["loadings"].T @ w, cp.multiply(p["idio_sd"], w)]), 2
        )
        constraints = [
            w - p["w_curr"] == z,
            1.0 - cp.sum(w) == c,
            cp.norm(w, 1) <= p["lev"],
            cp.abs(w) <= p["conc"],
            cp.sum(cp.pos(-w)) <= p["short_lim"],
            cp.norm(w - p["w_curr"], 2) + cp.abs(c - p["c_curr"])
            <= p["turn_lim2"] + s_turn,
            risk <= p["sigma_target"] + s_risk,
        ]
        if not mask.all():
            constraints += [w[~mask] == 0, z[~mask] == 0]

        self._vars = (w, c, z, s_risk, s_turn)
        self._params = p
        self._problem = cp.Problem(cp.Minimize(objective), constraints)

    def set_data(self, data: PMProblemData) -> None:
        """Install per-period data, recompiling only on structural change."""
        sig = self._structure(data)
        if sig != self._signature:
            self._build(data)
            self._signature = sig
        self.data = data
        p = self._params
        cost = data.cost_params
        p["alpha"].value = data.alpha
        p["r_rf"].value = data.r_rf
        p["w_curr"].value = data.w_curr
        p["c_curr"].value = data.c_curr
        p["loadings"].value = data.factor_loadings
        p["idio_sd"].value = np.sqrt(data.idio_var)
        p["sigma_target"].value = data.sigma_target
        p["gamma_risk"].value = data.gamma_risk
        p["gamma_turn"].value = data.gamma_turn
        p["spread_half"].value = 0.5 * data.gamma_tc * cost.kappa_spread
        p["impact"].value = data.gamma_tc * compute_impact_coeffs(cost)
        p["short_coeff"].value = data.gamma_short * data.r_rf
        p["lev"].value = data.leverage_limit
        p["conc"].value = data.concentration_limit
        p["short_lim"].value = data.short_limit
        p["turn_lim2"].value = 2.0 * data.turnover_limit
        self._clear_admm_terms()

    def _clear_admm_terms(self) -> None:
        n = self.data.n_assets
        self._params["lin"].value = np.zeros(n)
        self._params["prox_w"].value = np.zeros(n)
        self._params["prox_anchor"].value = np.zeros(n)

    # -- solving ---------------------------------------------------------

    def _solve(self) -> MarkowitzSolution:
        report = self.solver.solve(self._problem)
        if not report.certified:
            raise OracleFailureError(
                f"PM subproblem not certified optimal (status: {report.status})"
            )
        w, c, z, s_risk, s_turn = self._vars
        wv = np.asarray(w.value, dtype=float)
        zv = np.asarray(z.value, dtype=float)
        wv[~self._mask] = 0.0
        zv[~self._mask] = 0.0
        sol = MarkowitzSolution(
            w=wv,
            c=float(c.value),
            z=zv,
            s_risk=float(s_risk.value),
            s_turn=float(s_turn.value),
            objective=float(report.objective),
            report=report,
        )
        self.last_solution = sol
        return sol

    def initial_solve(self) -> np.ndarray:
        self._clear_admm_terms()
        return self._solve().z

    def admm_step(self, ell, x_prev, nav_weight, rho, scaling) -> np.ndarray:
        if nav_weight <= 0 or rho <= 0:
            raise InvalidParameterError("nav_weight and rho must be > 0")
        ell = np.asarray(ell, dtype=float)
        x_prev = np.asarray(x_prev, dtype=float)
        d = scaling.d
        p = self._params
        p["lin"].value = nav_weight * d * ell
        prox_w = np.sqrt(rho) * nav_weight * d
        p["prox_w"].value = prox_w
        p["prox_anchor"].value = prox_w * x_prev
        try:
            return self._solve().z
        finally:
            self._clear_admm_terms()


def markowitz_initial_solve(
    data: PMProblemData, solver: ConvexSolverPort | None = None
) -> MarkowitzSolution:
    """Solve the PM's own program; returns the full primal solution."""
    oracle = MarkowitzOracle(data, solver)
    oracle.initial_solve()
    return oracle.last_solution


def markowitz_admm_step(
    data: PMProblemData,
    ell: np.ndarray,
    x_prev: np.ndarray,
    nav_weight: float,
    rho: float,
    scaling: ScalingMatrix,
    solver: ConvexSolverPort | None = None,
) -> np.ndarray:
    """One coordination-round re-solve of the PM program; returns the trade."""
    return MarkowitzOracle(data, solver).admm_step(
        ell, x_prev, nav_weight, rho, scaling
    )
