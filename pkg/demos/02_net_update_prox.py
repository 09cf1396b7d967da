"""The planner's gathered update as a scalar proximal map.

Step 2 of every round solves, per asset, a one-dimensional strictly convex
problem: the net-trade cost (spread kink at zero, 3/2-power impact, optional
shorting kink, optional box) anchored to the received net trade. This script
sweeps the incoming net trade and shows the familiar shapes: soft
thresholding from the spread, shrinkage from impact, clipping from the box.
"""

import numpy as np

from netcoop import CostModelParams, ScalingMatrix
from netcoop.coordination import PlannerState, ProtocolParams, solve_net_update

M = 4
RHO = 10.0
params = ProtocolParams(scaling=ScalingMatrix([1.0]), rho=RHO)


def prox(net, cost, u=0.0, holding=None):
    state = PlannerState(
        u=np.array([u]),
        z_sum=np.zeros(1),
        n_pms=M,
        holdings_net=None if holding is None else np.array([holding]),
    )
    return solve_net_update(state, np.array([net]), params, cost)[0]


spread_only = CostModelParams.from_impact([0.02], [0.0], gamma_tc=1.0)
with_impact = CostModelParams.from_impact([0.02], [1.5], gamma_tc=1.0)
with_box = CostModelParams.from_impact(
    [0.02], [0.0], gamma_tc=1.0,
    net_box=(np.array([-0.05]), np.array([0.05])),
)

print("incoming net   spread-only   spread+impact   spread+box [-.05,.05]")
for net in np.linspace(-0.15, 0.15, 13):
    a = prox(net, spread_only)
    b = prox(net, with_impact)
    c = prox(net, with_box)
    print(f"{net:12.3f}   {a:11.5f}   {b:13.5f}   {c:18.5f}")

# The spread term creates a dead zone: small net trades are not worth
# executing at all. Its half-width is (kappa/2) * M / rho (D = 1 here).
threshold = 0.5 * 0.02 * M / RHO
print(f"\nspread dead zone: |net| <= {threshold:.4f} maps to exactly 0")

# A netted shorting cost tilts the map when the firm's current net position
# would go (or stay) short after the trade.
shorting = CostModelParams.from_impact(
    [0.0], [0.0], gamma_tc=1.0, gamma_short=1.0, r_rf=0.05
)
print("\nwith borrow costs on the net short position (holding = -0.02):")
for net in (-0.08, -0.02, 0.0, 0.02, 0.08):
    z = prox(net, shorting, holding=-0.02)
    print(f"  net {net:+.3f} -> z {z:+.5f}")
print(
    "buys that cover the short pass through; sells that deepen it are "
    "shaved\nby the borrow-rate slope."
)
