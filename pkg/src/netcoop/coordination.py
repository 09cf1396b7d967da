"""Distributed trade-coordination protocol: planner state, updates, round loop.

A central planner and ``M`` portfolio-manager oracles iterate:

  Step 1 (distributed): the planner broadcasts a per-asset price signal
      ell = u + (rho/M) * D * (net - z_sum)
  and every PM re-solves its own problem with a linear term ``lam * ell' D x``
  and a proximal penalty ``(rho/2) ||lam D (x - x_prev)||^2`` added.

  Step 2 (gathered): the planner receives the NAV-weighted net trade,
  solves the separable net-trade subproblem (spread + power impact +
  optional netted shorting cost + optional box) one coordinate at a time,
  and updates the shared dual vector.

The per-coordinate Step 2 subproblem is strictly convex; it is solved by a
safeguarded Newton iteration with bisection fallback after an exact
subgradient test at the kink points (the origin and, when a netted shorting
cost is active, the point where the net position crosses zero).

``run_unreduced_admm`` runs the same method without collapsing the per-PM
dual vectors and consensus copies; it exists as a verification oracle for
the reduced protocol and is restricted to quadratic oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    InvalidParameterError,
    NumericalError,
    OracleFailureError,
)
from .market_model import CostModelParams, ScalingMatrix, compute_impact_coeffs
from .pm_oracle import PMOracle, QuadraticPMData, quadratic_initial_solve

# Upper bound (exclusive) for the dual step-size parameter.
VARPHI_MAX = (1.0 + math.sqrt(5.0)) / 2.0

_MAX_SCALAR_ITER = 200
_GRAD_TOL = 1e-11


@dataclass
class ProtocolParams:
    """Protocol hyperparameters: penalty, dual step-size, rounds, scaling."""

    scaling: ScalingMatrix
    rho: float = 10.0
    varphi: float = 1.0
    n_rounds: int = 1

    def __post_init__(self):
        if self.rho <= 0:
            raise InvalidParameterError("rho must be > 0")
        if not 0 < self.varphi < VARPHI_MAX:
            raise InvalidParameterError(
                f"varphi must lie in (0, {VARPHI_MAX:.6f})"
            )
        if self.n_rounds < 0:
            raise InvalidParameterError("n_rounds must be >= 0")


@dataclass
class PlannerState:
    """Mutable planner-side state: shared dual, consensus net trade, round."""

    u: np.ndarray
    z_sum: np.ndarray
    n_pms: int
    round: int = 0
    holdings_net: np.ndarray | None = None


@dataclass(frozen=True)
class TradeSubmission:
    """A PM's trade vector and NAV weight, as received by the planner."""

    pm_id: int
    round: int
    weights: np.ndarray
    nav_weight: float


@dataclass(frozen=True)
class BroadcastSignal:
    """The per-asset signal broadcast identically to every PM."""

    round: int
    ell: np.ndarray


@dataclass(frozen=True)
class RoundComplete:
    round: int


Message = TradeSubmission | BroadcastSignal | RoundComplete


@dataclass
class RoundRecord:
    """Planner quantities for one round: signal in, aggregates/state out."""

    round: int
    ell: np.ndarray | None
    net: np.ndarray
    z_sum: np.ndarray
    u: np.ndarray


@dataclass
class Transcript:
    """Everything the planner observed: per-round records and message log."""

    rounds: list[RoundRecord] = field(default_factory=list)
    messages: list[Message] = field(default_factory=list)
    failed: bool = False
    failed_round: int | None = None

    def submissions(self, round: int) -> dict[int, np.ndarray]:
        """Trade vectors submitted for a given round, keyed by PM id."""
        return {
            m.pm_id: m.weights
            for m in self.messages
            if isinstance(m, TradeSubmission) and m.round == round
        }


@dataclass
class ProtocolResult:
    trades: list[np.ndarray]
    z_sum: np.ndarray
    nav_weights: np.ndarray
    transcript: Transcript
    failed: bool = False


def broadcast_signal(
    state: PlannerState, net_trade: np.ndarray, params: ProtocolParams
) -> np.ndarray:
    """Signal ``ell = u + (rho/M) D (net - z_sum)`` for the current round."""
    d = params.scaling.d
    net_trade = np.asarray(net_trade, dtype=float)
    if net_trade.shape != state.u.shape or d.shape != state.u.shape:
        raise DimensionError("net trade, dual and scaling lengths differ")
    return state.u + (params.rho / state.n_pms) * d * (net_trade - state.z_sum)


def dual_update(
    state: PlannerState,
    net_trade: np.ndarray,
    z_sum_next: np.ndarray,
    params: ProtocolParams,
) -> np.ndarray:
    """Dual step ``u + (varphi rho / M) D (net - z_sum_next)``."""
    d = params.scaling.d
    net_trade = np.asarray(net_trade, dtype=float)
    z_sum_next = np.asarray(z_sum_next, dtype=float)
    if net_trade.shape != state.u.shape or z_sum_next.shape != state.u.shape:
        raise DimensionError("net trade, dual and z_sum lengths differ")
    step = params.varphi * params.rho / state.n_pms
    return state.u + step * d * (net_trade - z_sum_next)


def _solve_scalar_prox(
    net_j: float,
    u_j: float,
    d_j: float,
    rho_over_m: float,
    spread_half: float,
    impact: float,
    p: float,
    short_slope: float,
    holding: float,
    box: tuple[float, float] | None,
) -> float:
    """Minimize one coordinate of the planner's Step 2 objective.

        psi(t) + (rho/2M) d^2 (t - net)^2 - u d t,
        psi(t) = spread_half |t| + impact |t|^p
                 + short_slope max(0, -(holding + t))

    ``spread_half`` and ``impact`` arrive already scaled by gamma_tc, and
    ``short_slope`` by gamma_short. Strictly convex since rho, d > 0.
    """
    c2 = rho_over_m * d_j * d_j
    lin = -u_j * d_j

    def smooth_grad(t: float) -> float:
        g = c2 * (t - net_j) + lin
        if t > 0:
            g += spread_half + impact * p * t ** (p - 1.0)
        elif t < 0:
            g -= spread_half + impact * p * (-t) ** (p - 1.0)
        if holding + t < 0:
            g -= short_slope
        return g

    def grad_interval(t: float) -> tuple[float, float]:
        base = c2 * (t - net_j) + lin
        lo = hi = base
        if t > 0:
            s = spread_half + impact * p * t ** (p - 1.0)
            lo += s
            hi += s
        elif t < 0:
            s = spread_half + impact * p * (-t) ** (p - 1.0)
            lo -= s
            hi -= s
        else:
            lo -= spread_half
            hi += spread_half
        pos = holding + t
        if pos < 0:
            lo -= short_slope
            hi -= short_slope
        elif pos == 0:
            lo -= short_slope
        return lo, hi

    kinks = {0.0}
    if short_slope > 0:
        kinks.add(-holding)
    kinks = sorted(kinks)

    t_star = None
    for c in kinks:
        lo, hi = grad_interval(c)
        if lo <= 0.0 <= hi:
            t_star = c
            break

    if t_star is None:
        # Locate the sign change of the (nondecreasing) derivative.
        a = b = None
        if grad_interval(kinks[0])[0] > 0:
            # minimizer left of the first kink; expand the bracket leftward
            b = kinks[0]
            step = max(1.0, abs(net_j), abs(lin) / c2)
            a = b - step
            for _ in range(_MAX_SCALAR_ITER):
                if smooth_grad(a) < 0:
                    break
                step *= 2.0
                a = b - step
            else:
                raise NumericalError("net-update bracket expansion failed")
        elif grad_interval(kinks[-1])[1] < 0:
            a = kinks[-1]
            step = max(1.0, abs(net_j), abs(lin) / c2)
            b = a + step
            for _ in range(_MAX_SCALAR_ITER):
                if smooth_grad(b) > 0:
                    break
                step *= 2.0
                b = a + step
            else:
                raise NumericalError("net-update bracket expansion failed")
        else:
            for k1, k2 in zip(kinks[:-1], kinks[1:]):
                if grad_interval(k1)[1] < 0 < grad_interval(k2)[0]:
                    a, b = k1, k2
                    break
            if a is None:
                raise NumericalError("net-update derivative has no sign change")

        # Safeguarded Newton: bisection whenever the Newton step leaves the
        # bracket. The 3/2 impact term has unbounded curvature at 0, so the
        # Hessian is evaluated away from the bracket endpoints only.
        t = 0.5 * (a + b)
        for _ in range(_MAX_SCALAR_ITER):
            g = smooth_grad(t)
            if abs(g) <= _GRAD_TOL:
                t_star = t
                break
            if g < 0:
                a = t
            else:
                b = t
            h = c2
            if impact > 0 and t != 0.0:
                h += impact * p * (p - 1.0) * abs(t) ** (p - 2.0)
            t_new = t - g / h
            t = t_new if a < t_new < b else 0.5 * (a + b)
            if b - a <= 1e-16 * max(1.0, abs(a), abs(b)):
                t_star = 0.5 * (a + b)
                break
        if t_star is None:
            raise NumericalError(
                f"net-update scalar solve did not converge in "
                f"{_MAX_SCALAR_ITER} iterations"
            )

    if box is not None:
        t_star = min(max(t_star, box[0]), box[1])
    return float(t_star)


def solve_net_update(
    state: PlannerState,
    net_trade: np.ndarray,
    params: ProtocolParams,
    cost: CostModelParams,
) -> np.ndarray:
    """Planner Step 2: separable minimization of the coupled net-trade cost.

    Solves, coordinate by coordinate,

        argmin_z  g(z) - u' D z + (rho / 2M) ||D z - D net||^2

    where ``g`` is the gamma-scaled transaction cost, plus the netted
    shorting cost of ``holdings_net + z`` when holdings are tracked, plus the
    indicator of the net box when present. When holdings are not supplied
    the shorting term is omitted.
    """
    net_trade = np.asarray(net_trade, dtype=float)
    n = cost.n_assets
    d = params.scaling.d
    if net_trade.shape != (n,) or state.u.shape != (n,) or d.shape != (n,):
        raise DimensionError("net trade, dual, scaling and cost lengths differ")

    spread_half = 0.5 * cost.gamma_tc * cost.kappa_spread
    impact = cost.gamma_tc * compute_impact_coeffs(cost)
    if state.holdings_net is not None:
        short_slope = cost.gamma_short * cost.r_rf
        holdings = np.asarray(state.holdings_net, dtype=float)
    else:
        short_slope = 0.0
        holdings = np.zeros(n)
    rho_over_m = params.rho / state.n_pms

    z = np.empty(n)
    for j in range(n):
        box = None
        if cost.net_box is not None:
            box = (cost.net_box[0][j], cost.net_box[1][j])
        z[j] = _solve_scalar_prox(
            net_trade[j],
            state.u[j],
            d[j],
            rho_over_m,
            spread_half[j],
            impact[j],
            cost.impact_power,
            short_slope,
            holdings[j],
            box,
        )
    return z


def initialize(
    oracles: list[PMOracle],
    navs,
    params: ProtocolParams,
    cost: CostModelParams,
    holdings_net: np.ndarray | None = None,
) -> tuple[PlannerState, list[np.ndarray]]:
    """Gather initial trades and set up planner state.

    Every oracle contributes its unconstrained-by-the-protocol solution
    ``argmin f``; the dual starts at zero and the initial consensus net
    trade is obtained from one gathered net update against the initial
    NAV-weighted net trade (so that the very first broadcast already
    carries cost information).
    """
    m = len(oracles)
    if m < 1:
        raise InvalidParameterError("at least one PM oracle is required")
    navs = np.asarray(navs, dtype=float)
    if navs.shape != (m,) or np.any(navs <= 0):
        raise InvalidParameterError("navs must be positive, one per oracle")
    lam = navs / navs.sum()

    trades = []
    for i, oracle in enumerate(oracles):
        try:
            trades.append(np.asarray(oracle.initial_solve(), dtype=float))
        except OracleFailureError as exc:
            raise OracleFailureError(
                f"protocol aborted: PM {i} failed its initial solve: {exc}"
            ) from exc

    n = cost.n_assets
    state = PlannerState(
        u=np.zeros(n),
        z_sum=np.zeros(n),
        n_pms=m,
        round=0,
        holdings_net=None
        if holdings_net is None
        else np.asarray(holdings_net, dtype=float),
    )
    net0 = sum(l * x for l, x in zip(lam, trades))
    state.z_sum = solve_net_update(state, net0, params, cost)
    return state, trades


def run_protocol(
    oracles: list[PMOracle],
    navs,
    params: ProtocolParams,
    cost: CostModelParams,
    holdings_net: np.ndarray | None = None,
    record_messages: bool = True,
) -> ProtocolResult:
    """Run the full coordination protocol for ``params.n_rounds`` rounds.

    Returns the final trades, the planner's consensus net trade, and a
    transcript of per-round planner quantities plus the message log. An
    oracle failure mid-run stops the loop and returns the trades of the
    last completed round with the failure flagged on the transcript.
    """
    state, trades = initialize(oracles, navs, params, cost, holdings_net)
    m = len(oracles)
    navs = np.asarray(navs, dtype=float)
    lam = navs / navs.sum()

    transcript = Transcript()
    net = sum(l * x for l, x in zip(lam, trades))
    if record_messages:
        for i, x in enumerate(trades):
            transcript.messages.append(
                TradeSubmission(i, 0, x.copy(), float(lam[i]))
            )
    transcript.rounds.append(
        RoundRecord(0, None, net.copy(), state.z_sum.copy(), state.u.copy())
    )

    for k in range(params.n_rounds):
        ell = broadcast_signal(state, net, params)
        if record_messages:
            transcript.messages.append(BroadcastSignal(k, ell.copy()))
        new_trades = []
        try:
            for i, oracle in enumerate(oracles):
                new_trades.append(
                    np.asarray(
                        oracle.admm_step(
                            ell, trades[i], float(lam[i]), params.rho, params.scaling
                        ),
                        dtype=float,
                    )
                )
        except OracleFailureError:
            transcript.failed = True
            transcript.failed_round = k
            return ProtocolResult(trades, state.z_sum, lam, transcript, failed=True)
        trades = new_trades
        if record_messages:
            for i, x in enumerate(trades):
                transcript.messages.append(
                    TradeSubmission(i, k + 1, x.copy(), float(lam[i]))
                )
        net = sum(l * x for l, x in zip(lam, trades))
        z_next = solve_net_update(state, net, params, cost)
        u_next = dual_update(state, net, z_next, params)
        state.z_sum = z_next
        state.u = u_next
        state.round = k + 1
        if record_messages:
            transcript.messages.append(RoundComplete(k + 1))
        transcript.rounds.append(
            RoundRecord(k + 1, ell, net.copy(), z_next.copy(), u_next.copy())
        )

    return ProtocolResult(trades, state.z_sum, lam, transcript)


# ---------------------------------------------------------------------------
# Unreduced variant: per-PM duals and consensus copies (verification oracle)
# ---------------------------------------------------------------------------


@dataclass
class UnreducedRound:
    """One round of the unreduced iteration, all per-PM quantities explicit."""

    round: int
    x: list[np.ndarray]  # PM trade weights x^i
    x_tilde: np.ndarray  # (M, N) NAV-scaled trades
    z: np.ndarray  # (M, N) per-PM consensus copies
    u: np.ndarray  # (M, N) per-PM duals
    z_sum: np.ndarray


def run_unreduced_admm(
    problems: list[QuadraticPMData],
    navs,
    params: ProtocolParams,
    cost: CostModelParams,
    n_rounds: int,
    holdings_net: np.ndarray | None = None,
) -> list[UnreducedRound]:
    """Run the splitting method without collapsing the per-PM duals.

    Small quadratic instances only; this is the verification oracle for
    ``run_protocol``. Per-PM duals ``u^i`` and consensus copies ``z^i`` are
    carried and updated independently; with equal initial duals they remain
    equal round for round, which the reduced protocol exploits. Returns the
    full iterate history, round 0 being the initialization.
    """
    m = len(problems)
    navs = np.asarray(navs, dtype=float)
    lam = navs / navs.sum()
    n = cost.n_assets
    d = params.scaling.d
    rho = params.rho

    targets = np.stack([np.asarray(p.target, dtype=float) for p in problems])
    masks = np.stack([np.asarray(p.mask, dtype=bool) for p in problems])

    x0 = np.stack([quadratic_initial_solve(p) for p in problems])
    x_tilde = lam[:, None] * x0
    u = np.zeros((m, n))
    net = x_tilde.sum(axis=0)

    def net_update(u_common: np.ndarray, net_t: np.ndarray) -> np.ndarray:
        tmp = PlannerState(
            u=u_common,
            z_sum=np.zeros(n),
            n_pms=m,
            holdings_net=holdings_net,
        )
        return solve_net_update(tmp, net_t, params, cost)

    z_sum = net_update(u.mean(axis=0), net)
    z = x_tilde - net[None, :] / m + z_sum[None, :] / m

    history = [
        UnreducedRound(0, [r.copy() for r in x0], x_tilde.copy(), z.copy(),
                       u.copy(), z_sum.copy())
    ]

    for k in range(n_rounds):
        # x-tilde update: closed form of the masked quadratic subproblem
        denom = 1.0 / lam[:, None] + rho * d[None, :] ** 2
        x_tilde = (targets - u * d[None, :] + rho * d[None, :] ** 2 * z) / denom
        x_tilde[~masks] = 0.0

        net = x_tilde.sum(axis=0)
        u_bar = u.mean(axis=0)
        z_sum = net_update(u_bar, net)
        z = (
            x_tilde
            + (u - u_bar[None, :]) / (rho * d[None, :])
            + (z_sum - net)[None, :] / m
        )
        u = u + params.varphi * rho * d[None, :] * (x_tilde - z)

        x = [x_tilde[i] / lam[i] for i in range(m)]
        history.append(
            UnreducedRound(k + 1, x, x_tilde.copy(), z.copy(), u.copy(),
                           z_sum.copy())
        )
    return history


# ---------------------------------------------------------------------------
# Transcript serialization
# ---------------------------------------------------------------------------


def _jnum(v: float) -> str:
    return format(float(v), ".17g")


def _jvec(v: np.ndarray) -> str:
    return "[" + ",".join(_jnum(x) for x in v) + "]"


def message_to_json(msg: Message, period: int | None = None) -> str:
    """Render one protocol message as a JSON object on a single line.

    Vector entries are rendered with 17 significant digits, which is enough
    to round-trip IEEE-754 doubles exactly. ``period`` tags the record with
    the backtest period the protocol instance belongs to.
    """
    tag = f'"period":{period},' if period is not None else ""
    if isinstance(msg, TradeSubmission):
        return (
            f'{{"type":"trade_submission",{tag}"pm_id":{msg.pm_id},'
            f'"round":{msg.round},"weights":{_jvec(msg.weights)},'
            f'"nav_weight":{_jnum(msg.nav_weight)}}}'
        )
    if isinstance(msg, BroadcastSignal):
        return (
            f'{{"type":"broadcast_signal",{tag}"round":{msg.round},'
            f'"ell":{_jvec(msg.ell)}}}'
        )
    if isinstance(msg, RoundComplete):
        return f'{{"type":"round_complete",{tag}"round":{msg.round}}}'
    raise TypeError(f"unknown message type: {type(msg)!r}")


def write_transcript_jsonl(transcript: Transcript, fh) -> None:
    """Write the transcript's message log as line-delimited JSON records."""
    for msg in transcript.messages:
        fh.write(message_to_json(msg))
        fh.write("\n")
