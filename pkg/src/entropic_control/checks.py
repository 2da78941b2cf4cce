"""Self-contained check suites behind ``entropic-control oracle``.

Each suite returns a list of :class:`Check` rows comparing a computed value
with a closed form. Invalid parameters raise rather than produce a failing
row, so the caller can tell bad input from a numerical failure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import oracle, twist
from .mvi import MviQuery, mvi_residual, solve_mvi_convex
from .problem import ControlBox, ControlProblem, CostSpec, DistributionSpec, DynamicsSpec, TimeGrid


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    expected: float
    tolerance: float

    def as_dict(self) -> dict:
        return {k: (v if not isinstance(v, (np.floating, np.bool_)) else v.item()) for k, v in asdict(self).items()}


def _close(name, value, expected, tol) -> Check:
    return Check(name, bool(abs(value - expected) <= tol), float(value), float(expected), float(tol))


def entropy_suite(seed: int = 0, n_paths: int = 100_000, n_fuzz: int = 10) -> list:
    out = []
    pois = oracle.PoissonShiftSpec(1.0, 2.0, 1.0)
    out.append(_close("poisson analytic 2log2-1", oracle.entropy_poisson_analytic(pois), 2 * np.log(2) - 1, 1e-9))
    drift = oracle.DriftShiftSpec([0.0], [0.5], [[1.0]], 1.0)
    out.append(_close("drift analytic 0.125", oracle.entropy_drift_shift_analytic(drift), 0.125, 1e-12))
    aniso = oracle.DriftShiftSpec([0.0, 0.0], [1.0, 1.0], np.diag([1.0, 2.0]), 1.0)
    out.append(_close("drift analytic anisotropic", oracle.entropy_drift_shift_analytic(aniso), 0.625, 1e-12))
    out.append(_close("gaussian mean shift", oracle.gaussian_entropy(1.0, 1.0, 0.0, 1.0), 0.5, 1e-12))
    rng = np.random.default_rng(seed)
    for i in range(n_fuzz):
        if i == 0:
            s = pois
        else:
            s = oracle.PoissonShiftSpec(*rng.uniform(0.2, 4.0, 2), T=float(rng.uniform(0.2, 2.0)))
        mc = oracle.entropy_mc_poisson(s, n_paths, seed + i)
        out.append(_close(f"poisson mc {i}", mc.estimate, oracle.entropy_poisson_analytic(s), 3 * mc.se))
    for i in range(n_fuzz):
        if i == 0:
            s, steps = drift, 200
        else:
            d = int(rng.integers(1, 4))
            a = rng.normal(size=(d, d))
            s = oracle.DriftShiftSpec(
                rng.normal(size=d), rng.normal(size=d), a + d * np.eye(d), T=float(rng.uniform(0.2, 2.0))
            )
            steps = 20
        mc = oracle.entropy_mc_drift(s, n_paths, steps, seed + 100 + i)
        out.append(_close(f"drift mc {i}", mc.estimate, oracle.entropy_drift_shift_analytic(s), 3 * mc.se))
    z = rng.uniform(-10, 10, 1000)
    gap = oracle.theta(z) - oracle.theta_lower_bound_corrected(z)
    out.append(Check("theta lower bound (corrected on [-1, 0))", bool(np.all(gap >= 0)), float(gap.min()), 0.0, 0.0))
    off = ~((z >= -1) & (z < 0))
    gap = oracle.theta(z[off]) - oracle.theta_lower_bound(z[off])
    out.append(Check("theta lower bound (stated, z outside [-1, 0))", bool(np.all(gap >= 0)), float(gap.min()), 0.0, 0.0))
    return out


def quadratic_problem(lower: float = -1.0, upper: float = 1.0) -> ControlProblem:
    """``b = u``, ``sigma = 1``, ``f = u^2 / 2`` on ``[lower, upper]``."""
    dyn = DynamicsSpec(
        drift=lambda t, x, u: np.broadcast_to(u, x.shape).astype(float, copy=True),
        diffusion=np.eye(1),
        state_dim=1,
        b_max=max(abs(lower), abs(upper)),
        c_sigma=1.0,
        drift_form="linear_in_control",
        drift_base=lambda t, x: np.zeros_like(x),
    )
    cost = CostSpec(
        running=lambda t, x, u: 0.5 * u[:, 0] ** 2,
        f_max=0.5 * max(lower**2, upper**2),
        running_grad=lambda t, x, u: u.copy(),
    )
    return ControlProblem(
        grid=TimeGrid(1.0, 1),
        box=ControlBox([lower], [upper]),
        dynamics=dyn,
        cost=cost,
        initial=DistributionSpec.dirac([0.0]),
    )


def mvi_suite(eps: Optional[float] = None) -> list:
    p = quadratic_problem()
    e = 1.0 if eps is None else eps
    out = []
    for delta, expected in ((1.0, min(1.0 / (1 + e), 1.0)), (4.0, min(4.0 / (1 + e), 1.0))):
        q = MviQuery(0.0, np.zeros(1), np.array([delta]), e)
        sol = solve_mvi_convex(q, p)
        out.append(_close(f"quadratic delta={delta}", float(sol.u_bar[0]), expected, 1e-6))
        out.append(Check(f"residual delta={delta}", sol.residual >= -1e-6, sol.residual, 0.0, 1e-6))
    q = MviQuery(0.0, np.zeros(1), np.array([1.0]), e)
    res = mvi_residual(np.array([-1.0]), q, p)
    out.append(Check("violation detected at far corner", res < -0.01, res, -0.01, 0.0))
    return out


def twist_suite(eps: Optional[float] = None, seed: int = 0) -> list:
    e = 1.0 if eps is None else eps
    out = []
    res = twist.twist_unconstrained(np.array([0.0, 1.0]), e)
    out.append(_close("two-point value", res.value, -np.log((1 + np.exp(-e)) / 2) / e, 1e-9))
    out.append(_close("value identity", res.value, res.expected_cost + res.entropy / e, 1e-9))
    sat = twist.twist_unconstrained(np.array([0.0, 1e6]), e)
    out.append(_close("saturated two-point value", sat.value, np.log(2) / e, 1e-9))
    gap = twist.dv_gap_check(np.array([0.0, 1.0]), e)
    out.append(Check("gap within bound", 0 <= gap.gap <= gap.bound, gap.gap, gap.bound, 0.0))
    phi = np.random.default_rng(seed).standard_normal(100_000)
    g = twist.dv_gap_check(phi, e)
    out.append(_close("gaussian gap matches bound", g.gap - g.bound, 0.0, 3 * g.se_diff))
    out.append(_close("uniform entropy", twist.entropy_from_weights(np.full(4, 0.25)), 0.0, 1e-12))
    out.append(_close("point-mass entropy", twist.entropy_from_weights(np.array([1.0, 0.0])), np.log(2), 1e-12))
    return out


SUITES = {"entropy": entropy_suite, "mvi": mvi_suite, "twist": twist_suite}
