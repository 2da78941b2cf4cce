"""Pointwise mixed variational inequality (MVI) behind the policy update.

For a state ``(t, x)``, a target drift ``delta`` and ``eps > 0`` we look for
``u_bar`` in the control box such that for every admissible ``u``

    f(t,x,u) - f(t,x,u_bar) + (1/eps) <Sigma^{-1}(b(t,x,u_bar) - delta), b(t,x,u) - b(t,x,u_bar)> >= 0.

Both solvers minimize the potential

    G(u) = f(t,x,u) + (1/(2 eps)) (b(t,x,u) - delta)' Sigma^{-1} (b(t,x,u) - delta)

over the box by projected gradient descent. For convex ``f`` and affine
``b`` a minimizer of ``G`` solves the MVI; otherwise the candidate has to
be certified with :func:`mvi_residual` on a grid of controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import MviError, ParameterError, PreconditionError
from .problem import ControlProblem

MAX_GRID_POINTS = 100_000
_FD_STEP = 1e-6


@dataclass(frozen=True)
class MviQuery:
    t: float
    x: np.ndarray
    delta: np.ndarray
    eps: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(delta)) and np.isfinite(self.t)):
            raise ParameterError("MVI query entries must be finite")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class MviSolution:
    u_bar: np.ndarray
    residual: float
    iterations: int


# ---------------------------------------------------------------------------
# batched potential and projected gradient
# ---------------------------------------------------------------------------


class Potential:
    """``G`` and its gradient for a batch of queries sharing ``t`` and ``eps``."""

    def __init__(self, p: ControlProblem, t: float, x: np.ndarray, delta: np.ndarray, eps: float):
        self.p = p
        self.t = float(t)
        self.x = np.asarray(x, dtype=float).reshape(-1, p.state_dim)
        self.delta = np.asarray(delta, dtype=float).reshape(-1, p.state_dim)
        self.eps = float(eps)
        self.prec = p.dynamics.precision(t, self.x)
        self.cmap = p.dynamics.control_map if p.dynamics.drift_form != "general" else None

    def value(self, u: np.ndarray, rows=slice(None)) -> np.ndarray:
        x, dl = self.x[rows], self.delta[rows]
        r = self.p.dynamics.drift(self.t, x, u) - dl
        pr = r @ self.prec.T if self.prec.ndim == 2 else np.einsum("bij,bj->bi", self.prec[rows], r)
        return self.p.cost.running(self.t, x, u) + np.sum(r * pr, axis=1) / (2.0 * self.eps)

    def _grad_f(self, x, u):
        if self.p.cost.running_grad is not None:
            return np.asarray(self.p.cost.running_grad(self.t, x, u), dtype=float)
        g = np.empty_like(u)
        for j in range(u.shape[1]):
            e = np.zeros(u.shape[1])
            e[j] = _FD_STEP
            g[:, j] = (self.p.cost.running(self.t, x, u + e) - self.p.cost.running(self.t, x, u - e)) / (
                2 * _FD_STEP
            )
        return g

    def _jac_b(self, x, u):
        if self.cmap is not None:
            return self.cmap
        d, pd = self.p.state_dim, u.shape[1]
        jac = np.empty((u.shape[0], d, pd))
        for j in range(pd):
            e = np.zeros(pd)
            e[j] = _FD_STEP
            jac[:, :, j] = (self.p.dynamics.drift(self.t, x, u + e) - self.p.dynamics.drift(self.t, x, u - e)) / (
                2 * _FD_STEP
            )
        return jac

    def grad(self, u: np.ndarray, rows=slice(None)) -> np.ndarray:
        x, dl = self.x[rows], self.delta[rows]
        r = self.p.dynamics.drift(self.t, x, u) - dl
        pr = r @ self.prec.T if self.prec.ndim == 2 else np.einsum("bij,bj->bi", self.prec[rows], r)
        jac = self._jac_b(x, u)
        coupling = pr @ jac if jac.ndim == 2 else np.einsum("bi,bij->bj", pr, jac)
        return self._grad_f(x, u) + coupling / self.eps

    def curvature_guess(self) -> float:
        """Lipschitz constant of the quadratic part (exact when the drift is affine)."""
        jac = self._jac_b(self.x[:1], np.tile(self.p.box.midpoint, (1, 1)))
        jac = jac if jac.ndim == 2 else jac[0]
        prec = self.prec if self.prec.ndim == 2 else self.prec[0]
        return float(np.linalg.norm(jac.T @ prec @ jac, 2)) / self.eps


def _least_squares_start(pot: Potential) -> np.ndarray:
    """Control whose affine drift best matches ``delta``, projected on the box."""
    p = pot.p
    n = pot.x.shape[0]
    if pot.cmap is None:
        return np.tile(p.box.midpoint, (n, 1))
    base = p.dynamics.drift_base(pot.t, pot.x)
    u = np.linalg.lstsq(pot.cmap, (pot.delta - base).T, rcond=None)[0].T
    return p.box.project(u)


def projected_gradient(
    pot: Potential,
    u0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 10_000,
):
    """Batched projected gradient with per-row backtracking step sizes.

    Stops a row once ``|u_{n+1} - u_n| <= tol``. Returns the iterates and
    the number of iterations performed.
    """
    box = pot.p.box
    u = box.project(np.array(u0, dtype=float, copy=True))
    n = u.shape[0]
    step = np.full(n, 1.0 / (pot.curvature_guess() + 1.0))
    active = np.ones(n, dtype=bool)
    g_val = pot.value(u)
    it = 0
    while active.any() and it < max_iter:
        it += 1
        rows = np.flatnonzero(active)
        ua = u[rows]
        ga = pot.grad(ua, rows)
        va = g_val[rows]
        sa = step[rows]
        pending = np.ones(rows.size, dtype=bool)
        new_u = ua.copy()
        new_v = va.copy()
        for _ in range(60):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            cand = box.project(ua[idx] - sa[idx, None] * ga[idx])
            dv = cand - ua[idx]
            cv = pot.value(cand, rows[idx])
            model = va[idx] + np.sum(ga[idx] * dv, axis=1) + np.sum(dv**2, axis=1) / (2.0 * sa[idx])
            ok = cv <= model + 1e-14 * (1.0 + np.abs(va[idx]))
            new_u[idx[ok]] = cand[ok]
            new_v[idx[ok]] = cv[ok]
            pending[idx[ok]] = False
            sa[idx[~ok]] *= 0.5
        moved = np.linalg.norm(new_u - ua, axis=1)
        u[rows] = new_u
        g_val[rows] = new_v
        step[rows] = sa
        active[rows[moved <= tol]] = False
    return u, it


def solve_mvi_batch(
    p: ControlProblem,
    t: float,
    x: np.ndarray,
    delta: np.ndarray,
    eps: float,
    u0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Minimize ``G`` for many ``(x, delta)`` pairs at one time (convex path)."""
    pot = Potential(p, t, x, delta, eps)
    start = _least_squares_start(pot) if u0 is None else u0
    u, _ = projected_gradient(pot, start, tol, max_iter)
    return u


# ---------------------------------------------------------------------------
# verification grid and residual
# ---------------------------------------------------------------------------


def control_grid(p: ControlProblem, grid_per_dim: int) -> np.ndarray:
    """Tensor grid of the box, or a Halton set plus the corners beyond the cap.

    The result is cached per box and resolution and returned read-only.
    """
    box = p.box
    key = (tuple(box.lower), tuple(box.upper), max(int(grid_per_dim), 1))
    if key not in _GRID_CACHE:
        grid = _control_grid(box, key[2])
        grid.flags.writeable = False
        if len(_GRID_CACHE) >= 16:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = grid
    return _GRID_CACHE[key]


_GRID_CACHE: dict = {}


def _control_grid(box, grid_per_dim: int) -> np.ndarray:
    pd = box.dim
    if grid_per_dim**pd <= MAX_GRID_POINTS:
        axes = [np.linspace(lo, hi, grid_per_dim) for lo, hi in zip(box.lower, box.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * pd, indexing="ij")).reshape(pd, -1).T
    n_halton = MAX_GRID_POINTS - corners.shape[0]
    pts = qmc.Halton(d=pd, scramble=False).random(n_halton + 1)[1:]
    unit = np.vstack([corners, pts])
    return box.lower + unit * box.width


def _residual_terms(p, q: MviQuery, u_bar, grid):
    x = np.tile(q.x, (grid.shape[0], 1))
    f_grid = p.cost.running(q.t, x, grid)
    f_bar = p.cost.running(q.t, q.x[None, :], u_bar[None, :])[0]
    b_grid = p.dynamics.drift(q.t, x, grid)
    b_bar = p.dynamics.drift(q.t, q.x[None, :], u_bar[None, :])[0]
    prec = p.dynamics.precision(q.t, q.x[None, :]).reshape(p.state_dim, p.state_dim)
    lhs = f_grid - f_bar + (b_grid - b_bar) @ (prec @ (b_bar - q.delta)) / q.eps
    return lhs, f_grid


def mvi_residual(u_bar, q: MviQuery, p: ControlProblem, grid_per_dim: int = 101) -> float:
    """Minimum of the MVI left-hand side over a control grid (``>= 0`` certifies)."""
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    if not p.box.contains(u_bar):
        raise PreconditionError("u_bar outside the control box")
    if np.all(p.box.width == 0):
        return 0.0
    lhs, _ = _residual_terms(p, q, u_bar, control_grid(p, grid_per_dim))
    return float(lhs.min())


def certification_tol(p: ControlProblem, q: MviQuery, grid_per_dim: int = 101) -> float:
    _, f_grid = _residual_terms(p, q, p.box.midpoint, control_grid(p, min(grid_per_dim, 11)))
    return 1e-6 * (1.0 + float(np.max(np.abs(f_grid))))


# ---------------------------------------------------------------------------
# single-query solvers
# ---------------------------------------------------------------------------


def _query_potential(q: MviQuery, p: ControlProblem) -> Potential:
    if q.x.size != p.state_dim or q.delta.size != p.state_dim:
        raise PreconditionError("query dimensions do not match the problem")
    return Potential(p, q.t, q.x[None, :], q.delta[None, :], q.eps)


def solve_mvi_convex(q: MviQuery, p: ControlProblem, grid_per_dim: int = 101) -> MviSolution:
    """Projected gradient on ``G`` for convex ``f`` and affine ``b``."""
    pot = _query_potential(q, p)
    start = _least_squares_start(pot)
    if not np.all(np.isfinite(pot.value(start))):
        raise MviError("potential is not finite at the starting point", query=q)
    u, it = projected_gradient(pot, start)
    u_bar = u[0]
    return MviSolution(u_bar, mvi_residual(u_bar, q, p, grid_per_dim), it)


def solve_mvi_linear(
    q: MviQuery,
    p: ControlProblem,
    grid_per_dim: int = 101,
    n_starts: Optional[int] = None,
) -> MviSolution:
    """Multi-start descent on ``G`` for ``b = gamma + u`` and possibly non-convex ``f``.

    The best local minimizer is certified with :func:`mvi_residual`; on
    failure the best point of a finer grid is refined and re-certified, and
    an :class:`MviError` is raised if that fails too.
    """
    if p.dynamics.drift_form != "linear_in_control":
        raise PreconditionError("solve_mvi_linear needs drift_form='linear_in_control'")
    pot = _query_potential(q, p)
    pd = p.control_dim
    s = n_starts if n_starts is not None else min(2**pd, 64)
    unit = qmc.Halton(d=pd, scramble=False).random(s + 1)[1:]
    starts = np.vstack([_least_squares_start(pot), p.box.lower + unit * p.box.width])
    multi = Potential(p, q.t, np.tile(q.x, (starts.shape[0], 1)), np.tile(q.delta, (starts.shape[0], 1)), q.eps)
    u, it = projected_gradient(multi, starts)
    vals = multi.value(u)
    best = u[int(np.argmin(vals))]
    tol = certification_tol(p, q, grid_per_dim)
    res = mvi_residual(best, q, p, grid_per_dim)
    if res >= -tol:
        return MviSolution(best, res, it)

    fine = control_grid(p, 2 * grid_per_dim)
    fpot = Potential(p, q.t, np.tile(q.x, (fine.shape[0], 1)), np.tile(q.delta, (fine.shape[0], 1)), q.eps)
    seed = fine[int(np.argmin(fpot.value(fine)))]
    refined, it2 = projected_gradient(pot, seed[None, :])
    cand = refined[0]
    res2 = mvi_residual(cand, q, p, grid_per_dim)
    if res2 > res:
        best, res = cand, res2
    if res >= -tol:
        return MviSolution(best, res, it + it2)
    raise MviError(
        f"MVI certification failed: residual {res:.3e} < -{tol:.1e}",
        u_best=best,
        residual=res,
        query=q,
    )
