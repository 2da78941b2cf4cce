"""Alternating minimization of the entropy-penalized cost on path ensembles.

Each iteration ``k``:

1. simulate ``P^k`` (the dynamics under policy ``u^k``) and the path costs;
2. Q-step: reweight the ensemble to ``Q^{k+1} = argmin_Q J(Q, P^k)``;
3. P-step: estimate the drift ``beta`` of ``Q^{k+1}`` and set
   ``u^{k+1}(t, x)`` to the MVI solution with target drift ``beta(t, x)``.

The penalized values ``J(Q^{k+1}, P^k)`` are non-increasing in ``k`` up to
Monte-Carlo error, which is what the per-iteration reports make visible.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import mvi as _mvi
from .errors import EntropicControlError, MviError, ParameterError, SolverError
from .estimate import DriftField, NearestIndex, RegressionConfig, nelson_drift
from .problem import ControlProblem, LqSpec, build_lq_instance
from .simulate import (
    ClosedFormPolicy,
    MarkovPolicy,
    PathCostVector,
    PathEnsemble,
    accumulate_path_cost,
    draw_noise,
    empirical_marginal,
    midpoint_policy,
    _euler,
)
from .twist import TwistResult, WeightVector, entropy_from_weights, twist_terminal_law, twist_unconstrained

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1.0
    n_paths: int = 10_000
    n_iterations: int = 10
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    mvi_grid: int = 101
    mvi_certify: int = 1
    mvi_solver: str = "convex"
    common_random_numbers: bool = True
    seed: int = 0
    ess_floor: Optional[float] = None
    check_sandwich: bool = True
    early_stop: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.n_paths < 100:
            raise ParameterError("n_paths must be at least 100")
        if self.n_iterations < 1:
            raise ParameterError("n_iterations must be at least 1")
        if self.mvi_solver not in ("convex", "linear"):
            raise ParameterError(f"unknown mvi_solver {self.mvi_solver!r}")

    @property
    def floor(self) -> float:
        return self.n_paths / 100.0 if self.ess_floor is None else self.ess_floor


class CloudPolicy(MarkovPolicy):
    """Policy tabulated at the anchor points of an iteration's ensemble.

    ``u(t_m, x)`` is the MVI solution at the anchor of slice ``m`` nearest
    to ``x`` (one memoized value per Voronoi cell).
    """

    representation = "cloud_backed"

    def __init__(self, p: ControlProblem, drift: DriftField, eps: float, solver: str = "convex",
                 mvi_grid: int = 101, certify: int = 1):
        super().__init__(p.box)
        self.p = p
        self.drift = drift
        self.eps = eps
        self.solver = solver
        self.mvi_grid = mvi_grid
        self.certify = certify
        self._controls: dict = {}
        self._lookup: dict = {}
        self.residuals: list = []

    def controls(self, m: int) -> np.ndarray:
        if m not in self._controls:
            self._controls[m] = self._solve_slice(m)
        return self._controls[m]

    def _solve_slice(self, m: int) -> np.ndarray:
        p = self.p
        t = p.grid.time(m)
        x = self.drift.anchors(m)
        delta = self.drift.at_anchors(m)
        if self.solver == "linear":
            u = np.vstack(
                [_mvi.solve_mvi_linear(_mvi.MviQuery(t, xi, di, self.eps), p, self.mvi_grid).u_bar
                 for xi, di in zip(x, delta)]
            )
            return u
        u = _mvi.solve_mvi_batch(p, t, x, delta, self.eps)
        for i in range(min(self.certify, x.shape[0])):
            q = _mvi.MviQuery(t, x[i], delta[i], self.eps)
            res = _mvi.mvi_residual(u[i], q, p, self.mvi_grid)
            tol = _mvi.certification_tol(p, q, self.mvi_grid)
            self.residuals.append(res)
            if res < -tol:
                raise MviError(
                    f"MVI certification failed at t={t:.4g}, x={x[i]}, delta={delta[i]}: residual {res:.3e}",
                    u_best=u[i], residual=res, query=q,
                )
        return u

    def tabulate(self) -> None:
        """Solve every slice, then release the drift field.

        The field references the ensemble it was fitted on and, through its
        reference drift, the previous policy; keeping it would hold every
        past iteration in memory.
        """
        if self.drift is None:
            return
        for m in range(self.drift.steps):
            self.controls(m)
            if m not in self._lookup:
                self._lookup[m] = NearestIndex(np.ascontiguousarray(self.drift.anchors(m)))
        self.drift = None

    def raw(self, m, x):
        if m not in self._lookup:
            self._lookup[m] = NearestIndex(self.drift.anchors(m))
        return self.controls(m)[self._lookup[m](x)]


@dataclass
class Iterate:
    k: int
    policy: MarkovPolicy
    ensemble: PathEnsemble
    phi: PathCostVector
    twist: Optional[TwistResult] = None
    drift_field: Optional[DriftField] = None

    @property
    def weights(self) -> Optional[WeightVector]:
        return None if self.twist is None else self.twist.weights


@dataclass
class IterateReport:
    k: int
    J: float
    J_se: float
    penalized: float
    penalized_se: float
    entropy: float
    expected_cost_q: float
    ess: float
    admissibility: float
    variance_bound: float
    ess_warning: bool = False
    terminal_fit: Optional[list] = None
    terminal_fit_p: Optional[list] = None
    sandwich: Optional[float] = None
    reference_gap: Optional[float] = None
    value_closed_form: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    reports: list
    policy: MarkovPolicy
    ensemble: PathEnsemble
    weights: WeightVector
    config: SolverConfig
    timings: dict
    aborted: bool = False
    reason: str = ""
    last: Optional[Iterate] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports], dtype=float)


# ---------------------------------------------------------------------------
# the three steps
# ---------------------------------------------------------------------------


def step_q(it: Iterate, p: ControlProblem, cfg: SolverConfig) -> TwistResult:
    """Closed-form minimizer of ``J(., P^k)`` over the constraint set."""
    if p.constraint.kind == "terminal_law":
        return twist_terminal_law(
            it.phi, it.ensemble.terminal, p.constraint.target, cfg.eps, cfg.regression, cfg.floor
        )
    return twist_unconstrained(it.phi, cfg.eps, cfg.floor)


def step_p(it: Iterate, weights: WeightVector, p: ControlProblem, cfg: SolverConfig) -> CloudPolicy:
    """Drift of ``Q^{k+1}`` by increment regression, then the MVI selector."""
    drift = nelson_drift(it.ensemble, weights, cfg.regression, p, it.policy)
    it.drift_field = drift
    policy = CloudPolicy(p, drift, cfg.eps, cfg.mvi_solver, cfg.mvi_grid, cfg.mvi_certify)
    policy.tabulate()
    return policy


def _ks_columns(dist, target) -> Optional[list]:
    if target is None or target.kind != "gaussian":
        return None
    return [dist.ks(lambda x, j=j: target.cdf_1d(x, j), j) for j in range(target.dim)]


def diagnostics(
    it: Iterate,
    tw: TwistResult,
    p: ControlProblem,
    cfg: SolverConfig,
    J_ref: Optional[float] = None,
) -> IterateReport:
    """Costs, entropy, effective sample size and terminal fit of one iterate."""
    phi = it.phi.values
    n = phi.size
    target = p.constraint.target
    rep = IterateReport(
        k=it.k,
        J=float(phi.mean()),
        J_se=float(phi.std(ddof=1) / np.sqrt(n)),
        penalized=tw.value,
        penalized_se=tw.se,
        entropy=tw.entropy,
        expected_cost_q=tw.expected_cost,
        ess=tw.weights.ess,
        admissibility=tw.entropy,
        variance_bound=float(0.5 * cfg.eps * phi.var()),
        ess_warning=tw.ess_warning,
        terminal_fit=_ks_columns(empirical_marginal(it.ensemble, p.grid.steps, tw.weights), target),
        terminal_fit_p=_ks_columns(empirical_marginal(it.ensemble, p.grid.steps), target),
        value_closed_form=tw.value_closed_form,
    )
    if J_ref is not None:
        rep.reference_gap = rep.J - J_ref
    return rep


def girsanov_log_ratio(p: ControlProblem, ensemble: PathEnsemble, new_controls: np.ndarray) -> np.ndarray:
    """Euler log-likelihood ratio ``log dP_old / dP_new`` along the stored paths."""
    dt = p.grid.dt
    out = np.zeros(ensemble.n_paths)
    for m in range(p.grid.steps):
        t = p.grid.time(m)
        x = ensemble.states[:, m]
        dx = ensemble.states[:, m + 1] - x
        r_old = dx - p.dynamics.drift(t, x, ensemble.controls[:, m]) * dt
        r_new = dx - p.dynamics.drift(t, x, new_controls[:, m]) * dt
        prec = p.dynamics.precision(t, x)
        if prec.ndim == 2:
            q_old = np.sum(r_old * (r_old @ prec.T), axis=1)
            q_new = np.sum(r_new * (r_new @ prec.T), axis=1)
        else:
            q_old = np.einsum("bi,bij,bj->b", r_old, prec, r_old)
            q_new = np.einsum("bi,bij,bj->b", r_new, prec, r_new)
        out -= (q_old - q_new) / (2.0 * dt)
    return out


def sandwich_value(p: ControlProblem, it: Iterate, tw: TwistResult, new_policy: MarkovPolicy, eps: float) -> float:
    """``J(Q^{k+1}, P^{k+1})`` evaluated on ensemble ``k`` by change of measure.

    ``H(Q|P^{k+1}) = H(Q|P^k) + E^Q[log dP^k/dP^{k+1}]`` and the running
    cost is re-evaluated with the new controls along the same paths.
    """
    ens = it.ensemble
    new_u = np.stack([new_policy(m, ens.states[:, m]) for m in range(p.grid.steps)], axis=1)
    moved = PathEnsemble(ens.states, ens.increments, new_u, ens.seed, ens.grid)
    phi_new = accumulate_path_cost(p, moved).values
    w = tw.weights.w
    lr = girsanov_log_ratio(p, ens, new_u)
    return float(w @ phi_new + (tw.entropy + w @ lr) / eps)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------


def run_alternating(
    p: ControlProblem,
    cfg: SolverConfig,
    initial_policy: Optional[MarkovPolicy] = None,
    callback: Optional[Callable[[IterateReport], None]] = None,
    J_ref: Optional[float] = None,
) -> RunResult:
    """Run ``cfg.n_iterations`` alternating steps starting from ``initial_policy``.

    ``callback`` receives each :class:`IterateReport` as soon as it is
    complete. Three consecutive iterations with an effective sample size
    below the floor abort the run; the partial result is returned with
    ``aborted=True``.
    """
    policy = initial_policy or midpoint_policy(p)
    timings = {"simulate": 0.0, "cost": 0.0, "q_step": 0.0, "p_step": 0.0, "diagnostics": 0.0}
    reports: list = []
    low_ess = 0
    noise = draw_noise(p, cfg.n_paths, cfg.seed) if cfg.common_random_numbers else None
    it = tw = None
    aborted, reason = False, ""
    for k in range(cfg.n_iterations):
        try:
            t0 = time.perf_counter()
            xi, x0 = noise if noise is not None else draw_noise(p, cfg.n_paths, cfg.seed + k)
            states, controls = _euler(p, policy, xi, x0)
            ens = PathEnsemble(states, xi, controls, cfg.seed if noise is not None else cfg.seed + k, p.grid)
            t1 = time.perf_counter()
            phi = accumulate_path_cost(p, ens)
            t2 = time.perf_counter()
            it = Iterate(k, policy, ens, phi)
            tw = step_q(it, p, cfg)
            it.twist = tw
            t3 = time.perf_counter()
            rep = diagnostics(it, tw, p, cfg, J_ref)
            t4 = time.perf_counter()
            new_policy = step_p(it, tw.weights, p, cfg)
            t5 = time.perf_counter()
            if cfg.check_sandwich:
                rep.sandwich = sandwich_value(p, it, tw, new_policy, cfg.eps)
            t6 = time.perf_counter()
        except SolverError:
            raise
        except EntropicControlError as exc:
            raise SolverError(f"iteration {k}: {exc}", iteration=k) from exc
        timings["simulate"] += t1 - t0
        timings["cost"] += t2 - t1
        timings["q_step"] += t3 - t2
        timings["diagnostics"] += (t4 - t3) + (t6 - t5)
        timings["p_step"] += t5 - t4
        reports.append(rep)
        log.info("k=%d J=%.5g penalized=%.5g entropy=%.4g ess=%.0f", k, rep.J, rep.penalized, rep.entropy, rep.ess)
        if callback is not None:
            callback(rep)
        low_ess = low_ess + 1 if rep.ess_warning else 0
        if rep.ess_warning:
            warnings.warn(f"iteration {k}: ESS {rep.ess:.1f} below floor {cfg.floor:.1f}", RuntimeWarning)
        policy = new_policy
        if low_ess >= 3:
            aborted, reason = True, f"ESS below floor for 3 consecutive iterations (k={k})"
            break
        if cfg.early_stop and len(reports) >= 6:
            last = reports[-6:]
            if all(abs(b.penalized - a.penalized) < 3 * a.penalized_se for a, b in zip(last, last[1:])):
                reason = f"early stop at k={k}"
                break
    return RunResult(
        reports=reports,
        policy=policy,
        ensemble=it.ensemble,
        weights=tw.weights,
        config=cfg,
        timings=timings,
        aborted=aborted,
        reason=reason,
        last=it,
    )


# ---------------------------------------------------------------------------
# linear-quadratic reference
# ---------------------------------------------------------------------------


class LqReference(NamedTuple):
    J_star: float
    policy: ClosedFormPolicy
    riccati: np.ndarray  # P(t_m) on the grid
    self_convergence: float


def _riccati(lq: LqSpec, steps: int):
    """RK4 backward for ``P' = P^2/r - q``, ``c' = -sigma^2 P / 2``, ``P(T) = c(T) = 0``."""
    h = lq.horizon / steps

    def rhs(y):
        return np.array([y[0] ** 2 / lq.r - lq.q, -0.5 * lq.sigma**2 * y[0]])

    y = np.zeros(2)
    path = np.empty(steps + 1)
    path[steps] = 0.0
    for m in range(steps, 0, -1):
        k1 = rhs(y)
        k2 = rhs(y - 0.5 * h * k1)
        k3 = rhs(y - 0.5 * h * k2)
        k4 = rhs(y - h * k3)
        y = y - h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        path[m - 1] = y[0]
    J = 0.5 * y[0] * (lq.x0**2 + lq.x0_var) + y[1]
    return float(J), path


def reference_lq_solution(lq: LqSpec, refine: int = 10) -> LqReference:
    """Optimal cost and feedback ``u*(t, x) = -P(t) x / r`` of the scalar LQ problem.

    The value function is ``P(t) x^2 / 2 + c(t)``; both Riccati equations are
    integrated backward with RK4 on the problem grid and on a ``refine``-times
    finer grid, whose difference is returned as ``self_convergence``.
    """
    J, path = _riccati(lq, lq.steps)
    J_fine, _ = _riccati(lq, lq.steps * refine)
    p = build_lq_instance(lq)
    grid = p.grid
    gains = path / lq.r

    def feedback(t, x):
        m = int(round(t / grid.dt))
        return -gains[m] * x

    reach = abs(lq.x0) + 4.0 * np.sqrt(lq.x0_var + lq.sigma**2 * lq.horizon)
    if np.max(np.abs(gains)) * reach > lq.u_bound:
        warnings.warn("reference LQ feedback hits the control bound on the simulated range", RuntimeWarning)
    return LqReference(J, ClosedFormPolicy(feedback, grid, p.box), path, abs(J - J_fine))
