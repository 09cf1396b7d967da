"""Run configuration: file schema, validation, and object construction.

The configuration is a single YAML (or JSON) key-value tree. Unknown keys
are rejected; missing required keys are reported by their dotted path; every
default equals the corresponding library default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .backtest import BacktestConfig
from .errors import ConfigError
from .synthetic_market import MarketSpec

_REQUIRED = object()

# Schema tree: leaves are (type(s), default); _REQUIRED marks mandatory keys.
_SCHEMA = {
    "seed": ((int,), _REQUIRED),
    "seeds": ((list,), None),
    "output_dir": ((str,), "out"),
    "market": {
        "n_assets": ((int,), _REQUIRED),
        "periods": ((int,), _REQUIRED),
        "n_factors": ((int,), 3),
        "factor_share": ((int, float), 0.6),
        "daily_vol_range": ((list,), [0.01, 0.03]),
        "mean_annual_return": ((int, float), 0.04),
        "volume_median": ((int, float), 2e6),
        "volume_sigma": ((int, float), 0.5),
        "spread_bps_range": ((list,), [1.0, 10.0]),
        "r_rf_annual": ((int, float), 0.02),
        "start_date": ((str,), "2000-01-03"),
    },
    "alphas": {
        "horizon": ((int,), 42),
        "cross_corr": ((int, float), 0.3),
        "target_ic_range": ((list,), [0.06, 0.10]),
        "autocorr_range": ((list,), [0.75, 0.85]),
    },
    "backtest": {
        "n_pms": ((int,), 4),
        "rebalance_every": ((int,), 1),
        "universe_fraction": ((int, float), 0.75),
        "sigma_target_range": ((list,), [0.06, 0.15]),
        "nav_log10_range": ((list,), [6.5, 7.5]),
        "leverage_limit": ((int, float), 1.5),
        "concentration_limit": ((int, float), 0.2),
        "short_limit": ((int, float), 0.5),
        "turnover_limit": ((int, float), 0.2),
        "gamma_risk": ((int, float), 20.0),
        "gamma_turn": ((int, float), 1.0),
        "gamma_tc": ((int, float), 0.15),
        "gamma_short": ((int, float), 1.0),
        "impact_coeff": ((int, float), 1.0),
        "n_risk_factors": ((int,), 15),
        "periods_per_year": ((int,), 252),
        "max_flagged_fraction": ((int, float), 0.05),
    },
    "protocol": {
        "rho": ((int, float), 10.0),
        "varphi": ((int, float), 1.0),
    },
}


def _validate(tree, schema, path=""):
    if not isinstance(tree, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    out = {}
    for key, value in tree.items():
        dotted = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown configuration key: {dotted}")
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _validate(value, spec, dotted)
        else:
            types, _ = spec
            # YAML 1.1 reads unsigned exponents like 6.0e6 as strings
            if float in types and isinstance(value, str):
                try:
                    value = float(value)
                except ValueError:
                    pass
            # bool is an int subclass; never accept it for numeric keys
            if isinstance(value, bool) or not isinstance(value, types):
                names = "/".join(t.__name__ for t in types)
                raise ConfigError(f"key {dotted} must be of type {names}")
            out[key] = value
    for key, spec in schema.items():
        dotted = f"{path}.{key}" if path else key
        if key in out:
            continue
        if isinstance(spec, dict):
            out[key] = _validate({}, spec, dotted)
        else:
            _, default = spec
            if default is _REQUIRED:
                raise ConfigError(f"missing required configuration key: {dotted}")
            out[key] = default
    return out


@dataclass
class RunConfig:
    """Validated configuration tree plus typed accessors."""

    tree: dict
    source: str = "<memory>"

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if raw is None:
            raw = {}
        return cls(tree=_validate(raw, _SCHEMA), source=str(path))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return cls(tree=_validate(raw, _SCHEMA))

    @property
    def seed(self) -> int:
        return self.tree["seed"]

    @property
    def seeds(self) -> list[int]:
        seeds = self.tree["seeds"]
        if seeds is None:
            return [self.seed]
        out = []
        for s in seeds:
            if isinstance(s, bool) or not isinstance(s, int):
                raise ConfigError(f"seeds entries must be integers, got {s!r}")
            out.append(s)
        if not out:
            raise ConfigError("seeds must list at least one seed")
        return out

    @property
    def output_dir(self) -> Path:
        return Path(self.tree["output_dir"])

    @property
    def n_generated_periods(self) -> int:
        return self.tree["market"]["periods"] + self.tree["alphas"]["horizon"]

    def market_spec(self) -> MarketSpec:
        m = self.tree["market"]
        return MarketSpec(
            n_factors=m["n_factors"],
            factor_share=m["factor_share"],
            daily_vol_range=tuple(m["daily_vol_range"]),
            mean_annual_return=m["mean_annual_return"],
            volume_median=m["volume_median"],
            volume_sigma=m["volume_sigma"],
            spread_bps_range=tuple(m["spread_bps_range"]),
            r_rf_annual=m["r_rf_annual"],
            periods_per_year=self.tree["backtest"]["periods_per_year"],
            start_date=m["start_date"],
        )

    def backtest_config(self) -> BacktestConfig:
        b = self.tree["backtest"]
        a = self.tree["alphas"]
        return BacktestConfig(
            n_assets=self.tree["market"]["n_assets"],
            n_pms=b["n_pms"],
            periods=self.tree["market"]["periods"],
            rebalance_every=b["rebalance_every"],
            universe_fraction=b["universe_fraction"],
            sigma_target_range=tuple(b["sigma_target_range"]),
            nav_log10_range=tuple(b["nav_log10_range"]),
            leverage_limit=b["leverage_limit"],
            concentration_limit=b["concentration_limit"],
            short_limit=b["short_limit"],
            turnover_limit=b["turnover_limit"],
            gamma_risk=b["gamma_risk"],
            gamma_turn=b["gamma_turn"],
            gamma_tc=b["gamma_tc"],
            gamma_short=b["gamma_short"],
            impact_coeff=b["impact_coeff"],
            n_risk_factors=b["n_risk_factors"],
            horizon=a["horizon"],
            cross_corr=a["cross_corr"],
            target_ic_range=tuple(a["target_ic_range"]),
            autocorr_range=tuple(a["autocorr_range"]),
            rho=self.tree["protocol"]["rho"],
            varphi=self.tree["protocol"]["varphi"],
            periods_per_year=b["periods_per_year"],
            max_flagged_fraction=b["max_flagged_fraction"],
        )

    def generation_hash(self) -> str:
        """Hash of the generation-relevant subtree (seed, market, alphas)."""
        payload = {
            "seed": self.tree["seed"],
            "market": self.tree["market"],
            "alphas": self.tree["alphas"],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
