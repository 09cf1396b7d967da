"""A small desk, four coordination policies, one shared tape.

Runs the multi-period backtest for the uncoordinated baseline, the
idealized joint solve, and the round-based protocol at 2 and 5 rounds, all
on identical market, alphas, and PM assignments. Prints the performance
table and the cost split per PM. Takes a minute or two: every rebalance
solves four conic programs per protocol round.
"""

import numpy as np

from netcoop import BacktestConfig, compare_scenarios
from netcoop.backtest import stats_rows
from netcoop.synthetic_market import MarketSpec

SCENARIOS = ["independent", "admm_2_iter", "admm_5_iter", "full_cooperative"]

config = BacktestConfig(
    n_assets=20,
    n_pms=4,
    periods=252,
    rebalance_every=21,
)
comparison = compare_scenarios(
    config, SCENARIOS, seeds=[3], market_spec=MarketSpec(volume_median=6e6)
)

print(f"{'scenario':18s} {'return':>8s} {'vol':>7s} {'sharpe':>7s} "
      f"{'cum tcost':>12s} {'tc saved':>9s}")
base_tc = comparison.results["independent"][0].firm_tc.sum()
for name in SCENARIOS:
    result = comparison.results[name][0]
    stats = result.stats("firm")
    tc = result.firm_tc.sum()
    sharpe = "n/a" if stats.sharpe is None else f"{stats.sharpe:7.2f}"
    print(f"{name:18s} {stats.ann_return:8.1%} {stats.ann_volatility:7.1%} "
          f"{sharpe:>7s} {tc:12,.0f} {1 - tc / base_tc:9.0%}")

print("\nper-PM cumulative transaction costs (currency):")
header = f"{'scenario':18s}" + "".join(f"{f'PM {i+1}':>12s}" for i in range(4))
print(header)
for name in SCENARIOS:
    result = comparison.results[name][0]
    cells = "".join(f"{result.pm_tc[:, i].sum():12,.0f}" for i in range(4))
    print(f"{name:18s}{cells}")

print(
    "\nEvery PM trades less expensively once the desk nets and coordinates; "
    "the\nround-based protocol needs only a couple of rounds to capture "
    "most of the\njoint solver's savings without pooling anyone's objective."
)

rows = stats_rows([comparison.results[s][0] for s in SCENARIOS])
firm_fracs = {r["scenario"]: r["cum_tcost_frac"] for r in rows
              if r["entity"] == "firm"}
print("\ncumulative costs as a fraction of NAV:")
for name in SCENARIOS:
    print(f"  {name:18s} {firm_fracs[name]:.2%}")
