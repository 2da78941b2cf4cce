"""Euler-Maruyama path ensembles under Markov feedback policies."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, PreconditionError, SimulationError
from .problem import ControlBox, ControlProblem, TimeGrid

BLOCK = 4096  # paths per independent random stream


class MarkovPolicy:
    """Feedback control ``u(t_m, x)`` evaluated on batches of states.

    Subclasses implement :meth:`raw`; :meth:`__call__` clips the result
    into the control box so outputs are always admissible.
    """

    representation = "abstract"

    def __init__(self, box: ControlBox):
        self.box = box

    def raw(self, m: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, m: int, x: np.ndarray) -> np.ndarray:
        u = np.asarray(self.raw(m, x), dtype=float)
        u = np.broadcast_to(u, (x.shape[0], self.box.dim))
        return self.box.project(u)


class ClosedFormPolicy(MarkovPolicy):
    """Policy given by a vectorized function ``fn(t, x) -> u``."""

    representation = "closed_form"

    def __init__(self, fn: Callable[[float, np.ndarray], np.ndarray], grid: TimeGrid, box: ControlBox):
        super().__init__(box)
        self.fn = fn
        self.grid = grid

    def raw(self, m, x):
        return self.fn(self.grid.time(m), x)


class ConstantPolicy(MarkovPolicy):
    representation = "closed_form"

    def __init__(self, value, box: ControlBox):
        super().__init__(box)
        self.value = np.broadcast_to(np.asarray(value, dtype=float), (box.dim,)).copy()

    def raw(self, m, x):
        return np.tile(self.value, (x.shape[0], 1))


def midpoint_policy(p: ControlProblem) -> ConstantPolicy:
    return ConstantPolicy(p.box.midpoint, p.box)


@dataclass(frozen=True)
class PathEnsemble:
    """``N`` simulated paths on the problem's time grid.

    ``states`` is ``(N, M + 1, d)``, ``increments`` the standard Gaussian
    draws ``(N, M, d)`` and ``controls`` the applied controls ``(N, M, p)``.
    """

    states: np.ndarray
    increments: np.ndarray
    controls: np.ndarray
    seed: int
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]


@dataclass(frozen=True)
class PathCostVector:
    values: np.ndarray
    running: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.values.size

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def _block_noise(seed: int, block: int, n: int, steps: int, d: int, initial):
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    noise_ss, init_ss = ss.spawn(2)
    xi = np.random.Generator(np.random.Philox(noise_ss)).standard_normal((n, steps, d))
    x0 = initial.sample(np.random.Generator(np.random.Philox(init_ss)), n)
    return xi, x0


def draw_noise(p: ControlProblem, n_paths: int, seed: int, workers: int = 1):
    """Gaussian increments and initial states for ``n_paths`` paths.

    Each block of :data:`BLOCK` paths owns a Philox stream keyed by
    ``(seed, block)``, so the output does not depend on ``workers``.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    d, steps = p.state_dim, p.grid.steps
    sizes = [min(BLOCK, n_paths - s) for s in range(0, n_paths, BLOCK)]
    jobs = [(seed, b, n, steps, d, p.initial) for b, n in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block_noise(*a), jobs))
    else:
        parts = [_block_noise(*a) for a in jobs]
    xi = np.concatenate([a for a, _ in parts], axis=0)
    x0 = np.concatenate([b for _, b in parts], axis=0)
    return xi, x0


def _diffuse(p: ControlProblem, t: float, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    sig = p.dynamics.sigma(t, x)
    if sig.ndim == 2:
        return xi @ sig.T
    return np.einsum("bij,bj->bi", sig, xi)


def _euler(p: ControlProblem, policy: MarkovPolicy, xi: np.ndarray, x0: np.ndarray):
    n, steps, d = xi.shape
    dt = p.grid.dt
    sqdt = np.sqrt(dt)
    states = np.empty((n, steps + 1, d))
    controls = np.empty((n, steps, p.control_dim))
    states[:, 0] = x0
    for m in range(steps):
        t = p.grid.time(m)
        x = states[:, m]
        u = policy(m, x)
        controls[:, m] = u
        # overflow shows up as non-finite states and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            b = np.asarray(p.dynamics.drift(t, x, u), dtype=float)
            nxt = x + b * dt + sqdt * _diffuse(p, t, x, xi[:, m])
        bad = ~np.all(np.isfinite(nxt), axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SimulationError(f"non-finite state on path {i} at step {m + 1}", path=i, step=m + 1)
        states[:, m + 1] = nxt
    return states, controls


def simulate_ensemble(
    p: ControlProblem, policy: MarkovPolicy, n_paths: int, seed: int, workers: int = 1
) -> PathEnsemble:
    """Simulate ``n_paths`` Euler-Maruyama paths under ``policy``.

    ``X[m+1] = X[m] + b(t_m, X[m], u(t_m, X[m])) dt + sigma(t_m, X[m]) sqrt(dt) xi[m]``
    with ``X[0]`` drawn from the initial law. Identical ``(seed, inputs)``
    give identical bits for any ``workers``.
    """
    xi, x0 = draw_noise(p, n_paths, seed, workers)
    states, controls = _euler(p, policy, xi, x0)
    return PathEnsemble(states, xi, controls, int(seed), p.grid)


def resimulate(p: ControlProblem, policy: MarkovPolicy, ensemble: PathEnsemble) -> PathEnsemble:
    """Re-run the dynamics under ``policy`` with the stored noise (common random numbers)."""
    states, controls = _euler(p, policy, ensemble.increments, ensemble.states[:, 0])
    return PathEnsemble(states, ensemble.increments, controls, ensemble.seed, ensemble.grid)


def accumulate_path_cost(
    p: ControlProblem, ensemble: PathEnsemble, policy: Optional[MarkovPolicy] = None
) -> PathCostVector:
    """Left-endpoint rule ``phi_i = sum_m f(t_m, X_m, u_m) dt + g(X_M)``.

    Without ``policy`` the controls stored in the ensemble are used.
    """
    if ensemble.grid != p.grid:
        raise PreconditionError("ensemble was generated on a different time grid")
    dt = p.grid.dt
    n, steps = ensemble.n_paths, p.grid.steps
    run = np.empty((n, steps))
    for m in range(steps):
        x = ensemble.states[:, m]
        u = ensemble.controls[:, m] if policy is None else policy(m, x)
        run[:, m] = p.cost.running(p.grid.time(m), x, u)
    phi = run.sum(axis=1) * dt + p.cost.g(ensemble.terminal)
    return PathCostVector(phi, run)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Samples with optional normalized weights (uniform when ``weights`` is None)."""

    samples: np.ndarray
    weights: Optional[np.ndarray] = None

    def _w(self):
        n = self.samples.shape[0]
        return np.full(n, 1.0 / n) if self.weights is None else self.weights / self.weights.sum()

    def mean(self) -> np.ndarray:
        return self._w() @ self.samples

    def var(self) -> np.ndarray:
        w = self._w()
        return w @ (self.samples - w @ self.samples) ** 2

    def ess(self) -> float:
        return float(1.0 / np.sum(self._w() ** 2))

    def ks(self, cdf: Callable[[np.ndarray], np.ndarray], dim: int = 0) -> float:
        """Kolmogorov-Smirnov distance of one (weighted) marginal to ``cdf``."""
        x = self.samples[:, dim]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cw = np.cumsum(self._w()[order])
        cw /= cw[-1]
        f = cdf(xs)
        before = np.concatenate(([0.0], cw[:-1]))
        return float(max(np.max(np.abs(cw - f)), np.max(np.abs(before - f))))


def empirical_marginal(ensemble: PathEnsemble, t_index: int, weights=None) -> EmpiricalDistribution:
    """States at ``t_index``; with weights attached this represents ``Q_t``."""
    if not 0 <= t_index <= ensemble.grid.steps:
        raise IndexError(f"t_index {t_index} outside 0..{ensemble.grid.steps}")
    w = None
    if weights is not None:
        w = np.asarray(getattr(weights, "w", weights), dtype=float)
    return EmpiricalDistribution(ensemble.states[:, t_index, :], w)


def write_ensemble_csv(ensemble: PathEnsemble, path) -> None:
    """Dump states as rows ``path_id, step, x_1..x_d``."""
    n, steps1, d = ensemble.states.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "step"] + [f"x_{j + 1}" for j in range(d)])
        for i in range(n):
            for m in range(steps1):
                writer.writerow([i, m] + [repr(float(v)) for v in ensemble.states[i, m]])
