"""
Alternating minimization on a scalar linear-quadratic problem
=============================================================

``dX = u dt + dW`` on ``[0, 1]`` with running cost ``x^2/2 + u^2/2`` has a
Riccati solution, so the Monte-Carlo scheme can be compared with the exact
optimum. Each iteration reweights the simulated paths (Q-step), regresses
the drift of the reweighted measure and solves the pointwise variational
inequality for the new feedback (P-step).

Two things to look for in the output:

* the penalized cost ``J(Q^{k+1}, P^k)`` never increases beyond its
  Monte-Carlo error, and the sandwich value ``J(Q^{k+1}, P^{k+1})`` sits
  below it;
* the plain cost ``J(P^k)`` ends within ``(eps/2) Var[phi]`` of the Riccati
  value.

Run with ``python3 demos/02_lq_descent.py [n_paths]``; the default 20000 paths
takes about a minute, the acceptance setting is 100000.
"""

from __future__ import annotations

import sys

import numpy as np

from entropic_control import LqSpec, RegressionConfig, SolverConfig, build_lq_instance
from entropic_control.simulate import accumulate_path_cost, simulate_ensemble
from entropic_control.solver import reference_lq_solution, run_alternating

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000

lq = LqSpec()
p = build_lq_instance(lq)

# ---------------------------------------------------------------------------
# The exact answer
# ---------------------------------------------------------------------------

ref = reference_lq_solution(lq)
print(f"Riccati J* = {ref.J_star:.6f}  (RK4 self-convergence {ref.self_convergence:.1e})")

# Simulating the optimal feedback on the same Euler grid shows the size of
# the time-discretization error the Monte-Carlo scheme has to live with.
phi = accumulate_path_cost(p, simulate_ensemble(p, ref.policy, n_paths, 7)).values
print(f"optimal feedback simulated: {phi.mean():.4f} +- {phi.std(ddof=1) / np.sqrt(n_paths):.4f}")

# ---------------------------------------------------------------------------
# The alternating scheme from u = 0
# ---------------------------------------------------------------------------

cfg = SolverConfig(eps=0.5, n_paths=n_paths, n_iterations=20, seed=1,
                   regression=RegressionConfig(k=max(200, n_paths // 100), n_anchors=5000))
res = run_alternating(p, cfg, J_ref=ref.J_star)

print(f"\n{'k':>3} {'J(P^k)':>9} {'penalized':>10} {'3 SE':>8} {'sandwich':>9} {'H(Q|P)':>8}")
for r in res.reports:
    print(f"{r.k:3d} {r.J:9.5f} {r.penalized:10.5f} {3 * r.penalized_se:8.5f} {r.sandwich:9.5f} {r.entropy:8.5f}")

pen, se = res.column("penalized"), res.column("penalized_se")
print("\nnon-increasing within 3 SE:", bool(np.all(pen[1:] <= pen[:-1] + 3 * se[:-1])))

last = res.reports[-1]
print(f"J(P^K) - J* = {last.reference_gap:+.5f}, bound (eps/2) Var[phi] = {last.variance_bound:.5f}")
print(f"relative error {abs(last.reference_gap) / ref.J_star:.2%}")

# The learned feedback is close to the Riccati gain -P(t) x. At t = 0 every
# path sits at x = 0, so the comparison starts once the paths have spread.
x = np.linspace(-1.0, 1.0, 5)[:, None]
for m in (30, 60, 90):
    learned = res.policy(m, x)[:, 0]
    exact = ref.policy(m, x)[:, 0]
    print(f"t={p.grid.time(m):.2f}  learned {np.round(learned, 3)}\n         exact   {np.round(exact, 3)}")
