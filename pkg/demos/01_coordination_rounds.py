"""Round-by-round anatomy of the trade-coordination protocol.

Three quadratic portfolio managers want different trades; their netted
order flow would eat into the book. Watch the planner's broadcast signal
reshape the trades round by round until the firm objective reaches the
closed-form joint optimum.
"""

import numpy as np

from netcoop import (
    CostModelParams,
    JointProblem,
    ProtocolParams,
    QuadraticOracle,
    QuadraticPMData,
    compute_impact_coeffs,
    compute_scaling,
    evaluate_joint_objective,
    run_protocol,
    solve_joint_quadratic,
)

rng = np.random.default_rng(7)
n_assets, n_pms = 6, 3

# Each PM's ideal trade list, drawn at random; NAVs set the voting weights.
pms = [QuadraticPMData(rng.normal(0, 0.3, n_assets)) for _ in range(n_pms)]
navs = rng.uniform(1.0, 5.0, n_pms)

# Quadratic impact cost so the joint problem has a closed-form solution.
cost = CostModelParams.from_impact(
    kappa_spread=np.zeros(n_assets),
    kappa_impact=rng.uniform(0.2, 1.0, n_assets),
    gamma_tc=0.5,
    impact_power=2.0,
)
problem = JointProblem(pms, navs, cost)
reference = solve_joint_quadratic(problem)
print(f"joint optimum objective: {reference.objective:.8f}")

scaling = compute_scaling(compute_impact_coeffs(cost))
print("\nround   |signal|_inf   |net - z_sum|_inf   objective gap")
for k in (0, 1, 2, 5, 10, 50, 200):
    params = ProtocolParams(scaling=scaling, rho=10.0, varphi=1.0, n_rounds=k)
    oracles = [QuadraticOracle(p) for p in pms]
    result = run_protocol(oracles, navs, params, cost, record_messages=False)
    gap = evaluate_joint_objective(problem, result.trades) - reference.objective
    last = result.transcript.rounds[-1]
    sig = 0.0 if last.ell is None else np.abs(last.ell).max()
    resid = np.abs(last.net - last.z_sum).max()
    print(f"{k:5d}   {sig:12.2e}   {resid:17.2e}   {gap:13.2e}")

print(
    "\nThe K=0 row is the uncoordinated baseline (each PM trades its own "
    "target);\na couple of rounds already capture most of the benefit, and "
    "long runs\nreproduce the joint solution to solver precision."
)

# Netting in action: compare gross and net order flow before/after.
lam = navs / navs.sum()
initial = [p.target for p in pms]
params = ProtocolParams(scaling=scaling, rho=10.0, varphi=1.0, n_rounds=50)
final = run_protocol([QuadraticOracle(p) for p in pms], navs, params, cost,
                     record_messages=False).trades
for label, trades in (("initial", initial), ("coordinated", final)):
    gross = sum(l * np.abs(x) for l, x in zip(lam, trades)).sum()
    net = np.abs(sum(l * x for l, x in zip(lam, trades))).sum()
    print(f"{label:12s} gross flow {gross:.4f}   net flow {net:.4f}")
