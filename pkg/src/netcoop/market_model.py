"""Transaction-cost and shorting-cost models, and the ADMM diagonal scaling.

The cost of executing a net trade ``z`` (expressed in portfolio-weight units,
i.e. fractions of NAV) is modeled as a bid-ask spread term plus a power-law
market-impact term:

    tcost(z) = (1/2) * kappa_spread' |z| + kappa_impact' |z|^p

with ``p = 3/2`` by default (a smooth quadratic variant ``p = 2`` is also
supported; it is the form used by the closed-form joint reference solver).
The impact coefficients are built from per-asset impact multipliers ``b``,
volatilities ``nu`` and dollar volumes ``omega``:

    kappa_impact_j = b_j * nu_j / sqrt(omega_j / V)

where ``V`` is the NAV of the account whose trading is being costed, so that
``omega_j / V`` is market volume in portfolio-weight units.

Shorting costs are charged on short *positions* (weights), not trades:
``short_cost(w) = r_rf * sum_j max(0, -w_j)``.

All evaluation functions here are unscaled; the penalty weights ``gamma_tc``
and ``gamma_short`` are applied by callers where they enter an objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError

# Floor for diagonal scaling entries. The sqrt(2*kappa_impact) heuristic
# yields 0 for zero-impact assets, which would break the strictly positive
# diagonal the protocol requires.
D_FLOOR = 1e-6

_VALID_IMPACT_POWERS = (1.5, 2.0)


@dataclass
class CostModelParams:
    """Parameters of the net-trade cost model for one account (PM or firm).

    Parameters
    ----------
    kappa_spread : ndarray
        Per-asset fractional bid-ask spread, elementwise >= 0.
    b : ndarray
        Per-asset market-impact multiplier, elementwise >= 0.
    nu : ndarray
        Per-asset return volatility over the rebalance period, >= 0.
    omega : ndarray
        Per-asset dollar volume over the rebalance period, > 0.
    nav : float
        NAV (currency) of the account trading; sets the weight units.
    gamma_tc, gamma_short : float
        Objective scales for the transaction-cost and shorting-cost terms.
        Stored here for convenience of callers; never applied internally.
    r_rf : float
        Per-period borrow rate used for the netted shorting cost.
    impact_power : float
        Exponent of the impact term, 1.5 (default) or 2.0.
    net_box : (ndarray, ndarray), optional
        Elementwise bounds ``[lo, hi]`` on the net trade weight, with
        ``lo <= 0 <= hi``.
    """

    kappa_spread: np.ndarray
    b: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    nav: float
    gamma_tc: float = 1.0
    gamma_short: float = 1.0
    r_rf: float = 0.0
    impact_power: float = 1.5
    net_box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.kappa_spread = np.asarray(self.kappa_spread, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        n = self.kappa_spread.shape[0]
        for name in ("kappa_spread", "b", "nu", "omega"):
            v = getattr(self, name)
            if v.ndim != 1 or v.shape[0] != n:
                raise DimensionError(f"{name} must be a length-{n} vector")
        if np.any(self.kappa_spread < 0) or np.any(self.b < 0) or np.any(self.nu < 0):
            raise InvalidParameterError("kappa_spread, b, nu must be nonnegative")
        if np.any(self.omega <= 0):
            raise InvalidParameterError("omega must be strictly positive")
        if self.nav <= 0:
            raise InvalidParameterError("nav must be strictly positive")
        if self.gamma_tc < 0 or self.gamma_short < 0:
            raise InvalidParameterError("gamma_tc and gamma_short must be >= 0")
        if self.r_rf < 0:
            raise InvalidParameterError("r_rf must be >= 0")
        if self.impact_power not in _VALID_IMPACT_POWERS:
            raise InvalidParameterError(
                f"impact_power must be one of {_VALID_IMPACT_POWERS}"
            )
        if self.net_box is not None:
            lo = np.asarray(self.net_box[0], dtype=float)
            hi = np.asarray(self.net_box[1], dtype=float)
            if lo.shape != (n,) or hi.shape != (n,):
                raise DimensionError("net_box bounds must be length-N vectors")
            if np.any(lo > 0) or np.any(hi < 0):
                raise InvalidParameterError("net_box must satisfy lo <= 0 <= hi")
            self.net_box = (lo, hi)

    @property
    def n_assets(self) -> int:
        return self.kappa_spread.shape[0]

    @classmethod
    def from_impact(
        cls,
        kappa_spread,
        kappa_impact,
        nav: float = 1.0,
        **kwargs,
    ) -> "CostModelParams":
        """Build params with directly specified impact coefficients.

        Sets ``b = kappa_impact``, ``nu = 1`` and ``omega = nav`` so that
        ``compute_impact_coeffs`` reproduces ``kappa_impact`` exactly.
        Convenient for tests and synthetic protocol instances.
        """
        kappa_impact = np.asarray(kappa_impact, dtype=float)
        n = kappa_impact.shape[0]
        return cls(
            kappa_spread=np.asarray(kappa_spread, dtype=float),
            b=kappa_impact,
            nu=np.ones(n),
            omega=np.full(n, float(nav)),
            nav=float(nav),
            **kwargs,
        )


@dataclass
class ScalingMatrix:
    """Diagonal scaling of the consensus constraint, stored as its diagonal."""

    d: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.ndim != 1:
            raise DimensionError("scaling diagonal must be a vector")
        if np.any(self.d <= 0):
            raise InvalidParameterError("scaling diagonal entries must be > 0")

    @property
    def n_assets(self) -> int:
        return self.d.shape[0]


def compute_impact_coeffs(params: CostModelParams) -> np.ndarray:
    """Per-asset impact coefficients ``b * nu / sqrt(omega / nav)``.

    Zero exactly where ``b * nu`` is zero.
    """
    return params.b * params.nu / np.sqrt(params.omega / params.nav)


def eval_tcost(z, params: CostModelParams) -> float:
    """Unscaled transaction cost of net trade ``z``, as a fraction of NAV.

    Even in ``z`` and convex; callers apply ``gamma_tc`` where needed.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (params.n_assets,):
        raise DimensionError(
            f"trade vector has length {z.shape}, expected ({params.n_assets},)"
        )
    az = np.abs(z)
    kappa_impact = compute_impact_coeffs(params)
    return float(
        0.5 * params.kappa_spread @ az + kappa_impact @ az**params.impact_power
    )


def eval_short_cost(w, r_rf: float) -> float:
    """Shorting cost ``r_rf * sum(max(0, -w))`` of holding weights ``w``."""
    if r_rf < 0:
        raise InvalidParameterError("r_rf must be >= 0")
    w = np.asarray(w, dtype=float)
    return float(r_rf * np.sum(np.maximum(0.0, -w)))


def compute_scaling(kappa_impact) -> ScalingMatrix:
    """Diagonal scaling ``D_jj = sqrt(2 * kappa_impact_j)``, floored.

    The heuristic aligns the protocol's quadratic consensus penalty with the
    curvature of a quadratic approximation of the cost model. Entries are
    floored at ``D_FLOOR`` so the diagonal stays strictly positive for
    zero-impact assets.
    """
    kappa_impact = np.asarray(kappa_impact, dtype=float)
    if np.any(kappa_impact < 0):
        raise InvalidParameterError("kappa_impact must be nonnegative")
    return ScalingMatrix(np.maximum(np.sqrt(2.0 * kappa_impact), D_FLOOR))


def net_cost_derivative(
    z_j: float,
    params: CostModelParams,
    j: int,
    holding: float = 0.0,
) -> tuple[float, float]:
    """Subgradient interval of the coordinate-j net cost at ``z_j``.

    The cost differentiated is

        gamma_tc * [ (kappa_spread_j / 2) |t| + kappa_impact_j |t|^p ]
        + gamma_short * r_rf * max(0, -(holding + t))

    i.e. the scaled transaction cost plus the netted shorting cost of the
    post-trade net position ``holding + t``. Returns ``(lo, hi)``; the two
    bounds coincide wherever the function is differentiable.
    """
    if not 0 <= j < params.n_assets:
        raise DimensionError(f"asset index {j} out of range")
    kappa_i = float(compute_impact_coeffs(params)[j])
    spread_half = 0.5 * params.gamma_tc * params.kappa_spread[j]
    p = params.impact_power
    short_slope = params.gamma_short * params.r_rf

    lo = hi = 0.0
    # spread: gamma_tc * (kappa_s/2) * |t|
    if z_j > 0:
        lo += spread_half
        hi += spread_half
    elif z_j < 0:
        lo -= spread_half
        hi -= spread_half
    else:
        lo -= spread_half
        hi += spread_half
    # impact: gamma_tc * kappa_i * |t|^p, differentiable (slope 0 at t=0)
    if z_j != 0.0:
        g = params.gamma_tc * kappa_i * p * abs(z_j) ** (p - 1.0) * np.sign(z_j)
        lo += g
        hi += g
    # shorting: gamma_short * r_rf * max(0, -(holding + t))
    pos = holding + z_j
    if pos < 0:
        lo -= short_slope
        hi -= short_slope
    elif pos == 0:
        lo -= short_slope
    return float(lo), float(hi)
