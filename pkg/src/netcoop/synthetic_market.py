"""Synthetic market data, IC-calibrated alphas, and risk-model estimation.

Replaces a real-data pipeline with controlled generators:

  * ``gen_market`` draws daily returns from a fixed ground-truth factor
    model and derives prices, lognormal dollar volumes, constant per-asset
    spreads and a constant risk-free rate.
  * ``gen_alpha_paths`` produces per-PM return forecasts as noised copies of
    *future* window returns, ``alpha_t = c * (R_t + E_t)``, with the noise
    scaled so the correlation between forecast and realized return hits a
    target information coefficient. The stacked noise follows a VAR(1)
    process whose stationary covariance has Kronecker structure
    ``S_E (x) Sigma_Asset``.
  * ``estimate_factor_model`` builds the common risk model from a
    forward-looking return window (standardize, winsorize, eigendecompose
    the correlation matrix, keep the top factors).

Both the alphas and the risk model look ahead by construction; they are
evaluation devices, not investable signals, and the lookahead is explicit
in the API (callers pass forward-window returns).

All generation is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._util import atomic_write_text, fmt12
from .errors import DimensionError, InvalidParameterError, MissingInputError

# Default alpha-generation parameters.
IC_RANGE = (0.06, 0.10)
AUTOCORR_RANGE = (0.75, 0.85)
CROSS_STRATEGY_CORR = 0.3
ALPHA_HORIZON = 42

WINSOR_LIMIT = 4.2
N_RISK_FACTORS = 15

_VOL_FLOOR = 1e-12


def calibrate_ic(rho_ic: float) -> tuple[float, float]:
    """Scaling and noise factors hitting a target information coefficient.

    For ``alpha = c (R + E)`` with ``E`` independent of ``R`` and
    ``std(E) = v * std(R)``, the correlation of alpha with R equals
    ``1/sqrt(1+v^2)``; solving for the target gives ``v = sqrt(1/rho^2 - 1)``
    and the conventional scaling ``c = rho^2``.
    """
    if not 0.0 < rho_ic <= 1.0:
        raise InvalidParameterError("target IC must lie in (0, 1]")
    c = rho_ic**2
    v = float(np.sqrt(1.0 / c - 1.0))
    return c, v


def solve_lyapunov(phi: np.ndarray, sigma_e: np.ndarray) -> np.ndarray:
    """Innovation covariance of a stationary VAR(1) with given state cov.

    Solves ``sigma_e = phi sigma_e phi' + sigma_u`` for ``sigma_u``,
    symmetrizes, and clips negative eigenvalues at zero if roundoff
    produced any. A materially indefinite result means no VAR(1) with this
    ``phi`` has stationary covariance ``sigma_e``; the clip then changes
    the process, so pass consistent pairs.
    """
    phi = np.asarray(phi, dtype=float)
    sigma_e = np.asarray(sigma_e, dtype=float)
    if phi.shape != sigma_e.shape or phi.ndim != 2:
        raise DimensionError("phi and sigma_e must be square matrices of equal size")
    if np.max(np.abs(np.linalg.eigvals(phi))) >= 1.0:
        raise InvalidParameterError("phi must have spectral radius < 1")
    sigma_u = sigma_e - phi @ sigma_e @ phi.T
    sigma_u = 0.5 * (sigma_u + sigma_u.T)
    vals, vecs = np.linalg.eigh(sigma_u)
    if vals[0] < 0.0:
        sigma_u = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        sigma_u = 0.5 * (sigma_u + sigma_u.T)
    return sigma_u


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    """Factor L with L L' = mat for symmetric PSD mat (eigenvalue clipping)."""
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


@dataclass
class AlphaGenConfig:
    """Per-PM alpha calibration: target ICs, noise autocorrelation, coupling."""

    target_ic: np.ndarray
    temporal_autocorr: np.ndarray
    cross_corr: float = CROSS_STRATEGY_CORR
    horizon: int = ALPHA_HORIZON
    seed: int = 0

    def __post_init__(self):
        self.target_ic = np.atleast_1d(np.asarray(self.target_ic, dtype=float))
        self.temporal_autocorr = np.atleast_1d(
            np.asarray(self.temporal_autocorr, dtype=float)
        )
        if self.target_ic.shape != self.temporal_autocorr.shape:
            raise DimensionError("target_ic / temporal_autocorr length mismatch")
        if np.any(self.target_ic <= 0) or np.any(self.target_ic > 1):
            raise InvalidParameterError("target ICs must lie in (0, 1]")
        if np.any(self.temporal_autocorr < 0) or np.any(self.temporal_autocorr >= 1):
            raise InvalidParameterError("autocorrelations must lie in [0, 1)")
        if not 0.0 <= self.cross_corr < 1.0:
            raise InvalidParameterError("cross_corr must lie in [0, 1)")
        if self.horizon < 1:
            raise InvalidParameterError("horizon must be >= 1")

    @property
    def n_pms(self) -> int:
        return self.target_ic.shape[0]

    @classmethod
    def sample(cls, n_pms: int, seed: int = 0) -> "AlphaGenConfig":
        """Draw per-PM parameters from their default uniform ranges."""
        rng = np.random.default_rng(seed)
        return cls(
            target_ic=rng.uniform(*IC_RANGE, size=n_pms),
            temporal_autocorr=rng.uniform(*AUTOCORR_RANGE, size=n_pms),
            seed=seed,
        )

    def noise_scales(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-PM (c, v) pairs from the IC calibration."""
        pairs = [calibrate_ic(r) for r in self.target_ic]
        return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    def strategy_cov(self) -> np.ndarray:
        """Cross-strategy block ``S_E``: diag v_i^2, off-diag corr*v_i*v_j."""
        _, v = self.noise_scales()
        s = self.cross_corr * np.outer(v, v)
        np.fill_diagonal(s, v**2)
        return s


@dataclass
class AlphaGenState:
    """VAR(1) noise state: current stacked noise plus innovation factors.

    Rows of ``e_prev`` index strategies. The innovation covariance solves the
    stationary (Lyapunov) equation; thanks to the Kronecker structure it is
    held as separate strategy-block and asset-block factors.
    """

    e_prev: np.ndarray
    phi: np.ndarray
    innov_factor: np.ndarray  # (M, M), factor of S_E - diag(phi) S_E diag(phi)
    asset_factor: np.ndarray  # (N, N), factor of Sigma_Asset

    @classmethod
    def stationary(
        cls,
        config: AlphaGenConfig,
        sigma_asset: np.ndarray,
        rng: np.random.Generator,
    ) -> "AlphaGenState":
        """Initialize by sampling the stationary distribution of the noise."""
        sigma_asset = np.asarray(sigma_asset, dtype=float)
        m = config.n_pms
        n = sigma_asset.shape[0]
        s_e = config.strategy_cov()
        phi = config.temporal_autocorr
        s_u = solve_lyapunov(np.diag(phi), s_e)
        l_se = _psd_factor(s_e)
        l_su = _psd_factor(s_u)
        l_a = _psd_factor(sigma_asset)
        e0 = l_se @ rng.standard_normal((m, n)) @ l_a.T
        return cls(e_prev=e0, phi=phi, innov_factor=l_su, asset_factor=l_a)

    def step(self, rng: np.random.Generator) -> np.ndarray:
        """Advance one period: ``E <- diag(phi) E + U`` with fresh innovation."""
        m, n = self.e_prev.shape
        u = self.innov_factor @ rng.standard_normal((m, n)) @ self.asset_factor.T
        self.e_prev = self.phi[:, None] * self.e_prev + u
        return self.e_prev


def gen_alpha_paths(
    config: AlphaGenConfig,
    fwd_returns: np.ndarray,
    sigma_asset: np.ndarray,
) -> np.ndarray:
    """Per-PM alpha series from forward-window returns.

    ``fwd_returns`` has shape (T, N): row ``t`` is the realized return over
    the horizon window starting at ``t`` (lookahead by construction).
    ``sigma_asset`` is the covariance of those window returns. Returns an
    (M, T, N) array ``alpha[i, t] = c_i (fwd_returns[t] + E_t^{(i)})``.
    """
    fwd_returns = np.asarray(fwd_returns, dtype=float)
    if fwd_returns.ndim != 2:
        raise DimensionError("fwd_returns must be (T, N)")
    t_len, n = fwd_returns.shape
    sigma_asset = np.asarray(sigma_asset, dtype=float)
    if sigma_asset.shape != (n, n):
        raise DimensionError("sigma_asset must be (N, N)")
    rng = np.random.default_rng(config.seed)
    c, _ = config.noise_scales()
    state = AlphaGenState.stationary(config, sigma_asset, rng)

    alphas = np.empty((config.n_pms, t_len, n))
    e = state.e_prev
    for t in range(t_len):
        alphas[:, t, :] = c[:, None] * (fwd_returns[t][None, :] + e)
        e = state.step(rng)
    return alphas


def forward_window_returns(returns: np.ndarray, horizon: int) -> np.ndarray:
    """Rolling forward sums: row t is ``sum(returns[t : t + horizon])``."""
    returns = np.asarray(returns, dtype=float)
    t_len = returns.shape[0]
    if horizon < 1 or horizon > t_len:
        raise InvalidParameterError("horizon must lie in [1, T]")
    cs = np.vstack([np.zeros((1, returns.shape[1])), np.cumsum(returns, axis=0)])
    return cs[horizon:] - cs[: t_len - horizon + 1]


# ---------------------------------------------------------------------------
# Risk model
# ---------------------------------------------------------------------------


def winsorize(x: np.ndarray, limit: float = WINSOR_LIMIT) -> np.ndarray:
    """Clamp standardized values to ``[-limit, +limit]``."""
    return np.clip(x, -limit, limit)


@dataclass
class FactorModel:
    """Low-rank-plus-diagonal covariance ``F F' + diag(idio_var)``."""

    loadings: np.ndarray  # (N, J)
    idio_var: np.ndarray  # (N,)
    vols: np.ndarray  # (N,) per-asset volatilities used in construction
    degenerate: np.ndarray | None = None  # flags zero-variance assets

    def covariance(self) -> np.ndarray:
        return self.loadings @ self.loadings.T + np.diag(self.idio_var)

    @property
    def n_assets(self) -> int:
        return self.loadings.shape[0]


def estimate_factor_model(window: np.ndarray, n_factors: int) -> FactorModel:
    """Estimate the common risk model from a (T, N) return window.

    Returns are standardized by per-asset window volatilities, winsorized at
    +/- ``WINSOR_LIMIT`` standard deviations, and the top ``n_factors``
    eigenpairs of the resulting correlation matrix become the factors:
    ``F = diag(vols) Q sqrt(Lambda)``. Idiosyncratic variances take up the
    variance the factors do not explain, so the reconstructed diagonal
    matches the per-asset sample variance.
    """
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] < 2:
        raise DimensionError("window must be (T, N) with T >= 2")
    n = window.shape[1]
    if not 1 <= n_factors <= n:
        raise InvalidParameterError("n_factors must lie in [1, N]")

    vols = window.std(axis=0, ddof=1)
    degenerate = vols < _VOL_FLOOR
    vols_f = np.maximum(vols, _VOL_FLOOR)
    standardized = (window - window.mean(axis=0)) / vols_f
    clipped = winsorize(standardized)

    if n == 1:
        corr = np.array([[1.0]])
    else:
        # degenerate (constant) assets produce NaN correlations; treat them
        # as uncorrelated with unit self-correlation
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(clipped, rowvar=False)
        corr = np.nan_to_num(corr, nan=0.0)
        np.fill_diagonal(corr, 1.0)

    vals, vecs = np.linalg.eigh(corr)
    order = np.argsort(vals)[::-1][:n_factors]
    lam = np.clip(vals[order], 0.0, None)
    q = vecs[:, order]
    loadings = vols_f[:, None] * q * np.sqrt(lam)[None, :]
    idio = np.maximum(vols_f**2 - (loadings**2).sum(axis=1), 0.0)
    return FactorModel(
        loadings=loadings, idio_var=idio, vols=vols_f, degenerate=degenerate
    )


# ---------------------------------------------------------------------------
# Market generation
# ---------------------------------------------------------------------------


@dataclass
class MarketSpec:
    """Ground-truth generator parameters for the synthetic market."""

    n_factors: int = 3
    factor_share: float = 0.6  # fraction of variance from common factors
    daily_vol_range: tuple = (0.01, 0.03)
    mean_annual_return: float = 0.04
    volume_median: float = 2e6
    volume_sigma: float = 0.5
    spread_bps_range: tuple = (1.0, 10.0)
    r_rf_annual: float = 0.02
    periods_per_year: int = 252
    start_date: str = "2000-01-03"


@dataclass
class MarketSeries:
    """Daily synthetic market data: prices, returns, volumes, spreads, rate."""

    dates: list[str]  # ISO-8601
    asset_ids: list[str]
    prices: np.ndarray  # (T, N)
    returns: np.ndarray  # (T, N)
    volumes: np.ndarray  # (T, N) dollar volumes
    spreads: np.ndarray  # (T, N) fractional spreads
    r_rf: np.ndarray  # (T,) per-period risk-free rate

    def __post_init__(self):
        t_len, n = self.prices.shape
        for name in ("returns", "volumes", "spreads"):
            if getattr(self, name).shape != (t_len, n):
                raise DimensionError(f"{name} shape mismatch")
        if self.r_rf.shape != (t_len,):
            raise DimensionError("r_rf length mismatch")
        if len(self.dates) != t_len or len(self.asset_ids) != n:
            raise DimensionError("dates / asset_ids length mismatch")
        if np.any(self.prices <= 0) or np.any(self.volumes <= 0):
            raise InvalidParameterError("prices and volumes must be positive")
        if np.any(self.spreads < 0):
            raise InvalidParameterError("spreads must be nonnegative")

    @property
    def n_periods(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]


def gen_market(
    n_assets: int,
    n_periods: int,
    spec: MarketSpec | None = None,
    seed: int = 0,
) -> MarketSeries:
    """Generate a synthetic market from a fixed ground-truth factor model."""
    if n_assets < 1 or n_periods < 1:
        raise InvalidParameterError("n_assets and n_periods must be >= 1")
    spec = spec if spec is not None else MarketSpec()
    rng = np.random.default_rng(seed)

    vols = rng.uniform(*spec.daily_vol_range, size=n_assets)
    directions = rng.standard_normal((n_assets, spec.n_factors))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    loadings = directions / norms * (np.sqrt(spec.factor_share) * vols)[:, None]
    idio_sd = np.sqrt(1.0 - spec.factor_share) * vols

    mu = spec.mean_annual_return / spec.periods_per_year
    factors = rng.standard_normal((n_periods, spec.n_factors))
    eps = rng.standard_normal((n_periods, n_assets))
    returns = mu + factors @ loadings.T + eps * idio_sd[None, :]
    prices = 100.0 * np.cumprod(1.0 + returns, axis=0)

    volumes = spec.volume_median * np.exp(
        spec.volume_sigma * rng.standard_normal((n_periods, n_assets))
    )
    spread_lo, spread_hi = spec.spread_bps_range
    spreads_assets = rng.uniform(spread_lo, spread_hi, size=n_assets) * 1e-4
    spreads = np.tile(spreads_assets, (n_periods, 1))
    r_rf = np.full(n_periods, spec.r_rf_annual / spec.periods_per_year)

    dates = [
        d.date().isoformat()
        for d in pd.bdate_range(spec.start_date, periods=n_periods)
    ]
    asset_ids = [f"A{j:03d}" for j in range(n_assets)]
    return MarketSeries(
        dates=dates,
        asset_ids=asset_ids,
        prices=prices,
        returns=returns,
        volumes=volumes,
        spreads=spreads,
        r_rf=r_rf,
    )


# ---------------------------------------------------------------------------
# CSV import/export: one file per series, rows are (date, asset_id, value)
# ---------------------------------------------------------------------------

_MARKET_FILES = ("prices", "returns", "volumes", "spreads", "riskfree")
_RF_ASSET_ID = "RF"


def _series_csv(dates, asset_ids, values: np.ndarray) -> str:
    lines = ["date,asset_id,value"]
    for t, date in enumerate(dates):
        row = values[t]
        for j, aid in enumerate(asset_ids):
            lines.append(f"{date},{aid},{fmt12(row[j])}")
    return "\n".join(lines) + "\n"


def save_market(series: MarketSeries, outdir) -> list[Path]:
    """Write one CSV per market series; returns the paths written."""
    outdir = Path(outdir)
    written = []
    grids = {
        "prices": series.prices,
        "returns": series.returns,
        "volumes": series.volumes,
        "spreads": series.spreads,
    }
    for name, grid in grids.items():
        written.append(
            atomic_write_text(
                outdir / f"{name}.csv",
                _series_csv(series.dates, series.asset_ids, grid),
            )
        )
    written.append(
        atomic_write_text(
            outdir / "riskfree.csv",
            _series_csv(series.dates, [_RF_ASSET_ID], series.r_rf[:, None]),
        )
    )
    return written


def _load_series_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"missing data file: {path}")
    frame = pd.read_csv(path, dtype={"date": str, "asset_id": str})
    expected = ["date", "asset_id", "value"]
    if list(frame.columns) != expected:
        raise MissingInputError(f"{path} must have columns {expected}")
    return frame


def _pivot(frame: pd.DataFrame) -> tuple[list[str], list[str], np.ndarray]:
    wide = frame.pivot(index="date", columns="asset_id", values="value")
    wide = wide.sort_index()
    return (
        list(wide.index),
        list(wide.columns),
        wide.to_numpy(dtype=float),
    )


def load_market(outdir) -> MarketSeries:
    """Read back a market written by :func:`save_market`."""
    outdir = Path(outdir)
    grids = {}
    dates = asset_ids = None
    for name in ("prices", "returns", "volumes", "spreads"):
        d, a, v = _pivot(_load_series_csv(outdir / f"{name}.csv"))
        if dates is None:
            dates, asset_ids = d, a
        elif d != dates or a != asset_ids:
            raise MissingInputError(f"{name}.csv is inconsistent with prices.csv")
        grids[name] = v
    d, a, rf = _pivot(_load_series_csv(outdir / "riskfree.csv"))
    if d != dates or a != [_RF_ASSET_ID]:
        raise MissingInputError("riskfree.csv is inconsistent with prices.csv")
    return MarketSeries(
        dates=dates,
        asset_ids=asset_ids,
        prices=grids["prices"],
        returns=grids["returns"],
        volumes=grids["volumes"],
        spreads=grids["spreads"],
        r_rf=rf[:, 0],
    )


def save_alphas(alphas: np.ndarray, dates, asset_ids, outdir) -> list[Path]:
    """Write one CSV per PM alpha series (``alphas_pm_<i>.csv``, 1-based)."""
    outdir = Path(outdir)
    written = []
    for i in range(alphas.shape[0]):
        written.append(
            atomic_write_text(
                outdir / f"alphas_pm_{i + 1}.csv",
                _series_csv(dates, asset_ids, alphas[i]),
            )
        )
    return written


def load_alphas(outdir, n_pms: int) -> np.ndarray:
    """Read back alpha series written by :func:`save_alphas`."""
    outdir = Path(outdir)
    per_pm = []
    dates = asset_ids = None
    for i in range(n_pms):
        d, a, v = _pivot(_load_series_csv(outdir / f"alphas_pm_{i + 1}.csv"))
        if dates is None:
            dates, asset_ids = d, a
        elif d != dates or a != asset_ids:
            raise MissingInputError(f"alphas_pm_{i + 1}.csv is inconsistent")
        per_pm.append(v)
    return np.stack(per_pm)
