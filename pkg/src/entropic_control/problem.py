"""Control problem definitions.

A :class:`ControlProblem` bundles controlled diffusion dynamics, running and
terminal costs, a box of admissible controls, an initial law and a
constraint on the law of the controlled process. All callables are
vectorized over a batch axis:

* ``drift(t, x, u)`` maps ``(B, d)`` states and ``(B, p)`` controls to ``(B, d)``;
* ``diffusion`` is either a constant ``(d, d)`` matrix or ``(t, x) -> (B, d, d)``;
* ``running(t, x, u)`` returns ``(B,)`` and ``terminal(x)`` returns ``(B,)``.

Three builtin instances are provided: the aggregated air-conditioner model
(:func:`build_hvac_instance`), a scalar linear-quadratic problem
(:func:`build_lq_instance`) and a scalar bridge toward a Gaussian terminal
law (:func:`build_bridge_instance`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from . import _kde
from .errors import ParameterError, PreconditionError, StructuralError

DriftFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
CostFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_M = T``."""

    t_end: float
    steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if not self.t_end > 0:
            raise ParameterError(f"horizon must be positive, got T={self.t_end}")
        if int(self.steps) < 1:
            raise ParameterError(f"need at least one time step, got M={self.steps}")
        if self.t_start != 0.0:
            raise ParameterError("time grids start at t=0")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def time(self, m: int) -> float:
        return m * self.dt


@dataclass(frozen=True)
class ControlBox:
    """Compact box ``[lower, upper]`` of admissible controls."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise StructuralError("box: lower and upper must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ParameterError("box: bounds must be finite (compact control set)")
        if np.any(lo > hi):
            raise ParameterError("box: lower must not exceed upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)

    def contains(self, u: np.ndarray, atol: float = 1e-12) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.all((u >= self.lower - atol) & (u <= self.upper + atol), axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dim)) * self.width


@dataclass(frozen=True)
class DynamicsSpec:
    """Drift ``b(t, x, u)`` and diffusion ``sigma(t, x)`` of the controlled SDE.

    ``drift_form`` declares structure used by the MVI solvers: ``"affine"``
    means ``b = drift_base(t, x) + control_map @ u``; ``"linear_in_control"``
    is the affine case with ``control_map`` the identity (so ``p == d``).
    """

    drift: DriftFn
    diffusion: np.ndarray | Callable[[float, np.ndarray], np.ndarray]
    state_dim: int
    b_max: float
    c_sigma: float
    drift_form: Literal["general", "affine", "linear_in_control"] = "general"
    drift_base: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    control_map: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.drift_form not in ("general", "affine", "linear_in_control"):
            raise ParameterError(f"unknown drift_form {self.drift_form!r}")
        if self.drift_form != "general" and self.drift_base is None:
            raise StructuralError("dynamics: affine drift forms need drift_base")
        if self.drift_form == "linear_in_control":
            object.__setattr__(self, "control_map", np.eye(self.state_dim))
        if self.control_map is not None:
            cm = np.atleast_2d(np.asarray(self.control_map, dtype=float))
            if cm.shape[0] != self.state_dim:
                raise StructuralError("dynamics: control_map must have state_dim rows")
            object.__setattr__(self, "control_map", cm)
        if not callable(self.diffusion):
            sig = np.atleast_2d(np.asarray(self.diffusion, dtype=float))
            if sig.shape != (self.state_dim, self.state_dim):
                raise StructuralError(
                    f"dynamics: diffusion matrix has shape {sig.shape}, expected "
                    f"({self.state_dim}, {self.state_dim})"
                )
            object.__setattr__(self, "diffusion", sig)

    @property
    def constant_diffusion(self) -> bool:
        return not callable(self.diffusion)

    def sigma(self, t: float, x: np.ndarray) -> np.ndarray:
        """Diffusion matrices, ``(d, d)`` if constant else ``(B, d, d)``."""
        if self.constant_diffusion:
            return self.diffusion
        return np.asarray(self.diffusion(t, x), dtype=float)

    def covariance(self, t: float, x: np.ndarray) -> np.ndarray:
        s = self.sigma(t, x)
        return s @ np.swapaxes(s, -1, -2)

    def precision(self, t: float, x: np.ndarray) -> np.ndarray:
        """``Sigma^{-1}`` through a Cholesky factorisation."""
        cov = self.covariance(t, x)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise StructuralError("dynamics: sigma sigma^T is not positive definite") from exc
        eye = np.broadcast_to(np.eye(self.state_dim), cov.shape)
        linv = np.linalg.solve(chol, eye)
        return np.swapaxes(linv, -1, -2) @ linv


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``f(t, x, u)`` and terminal cost ``g(x)`` with declared bounds."""

    running: CostFn
    f_max: float
    terminal: Optional[Callable[[np.ndarray], np.ndarray]] = None
    g_max: float = 0.0
    running_grad: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None

    def g(self, x: np.ndarray) -> np.ndarray:
        if self.terminal is None:
            return np.zeros(x.shape[0])
        return np.asarray(self.terminal(x), dtype=float)


@dataclass(frozen=True)
class DistributionSpec:
    """Law on ``R^d``: a Dirac mass, a diagonal Gaussian, or an empirical sample."""

    kind: Literal["dirac", "gaussian", "empirical"]
    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "dirac":
            object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, float)))
        elif self.kind == "gaussian":
            mean = np.atleast_1d(np.asarray(self.mean, float))
            var = np.broadcast_to(np.asarray(self.var, float), mean.shape).copy()
            if np.any(var <= 0):
                raise ParameterError("gaussian law needs strictly positive variances")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "var", var)
        elif self.kind == "empirical":
            if self.samples is None or len(self.samples) == 0:
                raise ParameterError("empirical law needs at least one sample")
            object.__setattr__(self, "samples", _kde.as_points(self.samples))
        else:
            raise ParameterError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def dirac(cls, x0) -> "DistributionSpec":
        return cls("dirac", mean=x0)

    @classmethod
    def gaussian(cls, mean, var) -> "DistributionSpec":
        return cls("gaussian", mean=mean, var=var)

    @classmethod
    def empirical(cls, samples) -> "DistributionSpec":
        return cls("empirical", samples=samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1] if self.kind == "empirical" else self.mean.size

    @property
    def has_density(self) -> bool:
        return self.kind in ("gaussian", "empirical")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "dirac":
            return np.tile(self.mean, (n, 1))
        if self.kind == "gaussian":
            return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.dim))
        idx = rng.integers(0, self.samples.shape[0], size=n)
        return self.samples[idx].copy()

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = _kde.as_points(x)
        if self.kind == "gaussian":
            z = (x - self.mean) ** 2 / self.var
            return -0.5 * np.sum(z + np.log(2.0 * np.pi * self.var), axis=1)
        if self.kind == "empirical":
            with np.errstate(divide="ignore"):
                return np.log(_kde.gaussian_kde(self.samples, x))
        raise PreconditionError("a Dirac law has no density")

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf_1d(self, x: np.ndarray, dim: int = 0) -> np.ndarray:
        """Marginal CDF along one coordinate (gaussian laws only)."""
        from scipy.stats import norm

        if self.kind != "gaussian":
            raise PreconditionError("marginal CDF only available for gaussian laws")
        return norm.cdf(x, loc=self.mean[dim], scale=np.sqrt(self.var[dim]))


@dataclass(frozen=True)
class ConstraintSet:
    kind: Literal["unconstrained", "terminal_law"] = "unconstrained"
    target: Optional[DistributionSpec] = None

    def __post_init__(self):
        if self.kind == "terminal_law":
            if self.target is None or not self.target.has_density:
                raise ParameterError("terminal-law constraint needs a target with a density")
        elif self.kind != "unconstrained":
            raise ParameterError(f"unknown constraint kind {self.kind!r}")

    @classmethod
    def terminal_law(cls, target: DistributionSpec) -> "ConstraintSet":
        return cls("terminal_law", target)


@dataclass(frozen=True)
class ControlProblem:
    """Everything needed to pose the constrained control problem."""

    grid: TimeGrid
    box: ControlBox
    dynamics: DynamicsSpec
    cost: CostSpec
    initial: DistributionSpec
    constraint: ConstraintSet = field(default_factory=ConstraintSet)
    state_range: Optional[tuple] = None
    name: str = "custom"

    def __post_init__(self):
        d, p = self.dynamics.state_dim, self.box.dim
        if self.initial.dim != d:
            raise StructuralError(f"initial: law has dimension {self.initial.dim}, state has {d}")
        if self.constraint.target is not None and self.constraint.target.dim != d:
            raise StructuralError(
                f"constraint: target has dimension {self.constraint.target.dim}, state has {d}"
            )
        cm = self.dynamics.control_map
        if cm is not None and cm.shape[1] != p:
            raise StructuralError(f"dynamics: control_map has {cm.shape[1]} columns, box has {p}")
        if self.state_range is None:
            object.__setattr__(self, "state_range", _default_range(self.initial, self.constraint))
        else:
            lo, hi = (np.broadcast_to(np.asarray(a, float), (d,)) for a in self.state_range)
            object.__setattr__(self, "state_range", (lo, hi))

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dim(self) -> int:
        return self.box.dim


def _default_range(initial: DistributionSpec, constraint: ConstraintSet):
    laws = [initial] + ([constraint.target] if constraint.target is not None else [])
    los, his = [], []
    for law in laws:
        if law.kind == "dirac":
            c, s = law.mean, np.ones_like(law.mean)
        elif law.kind == "gaussian":
            c, s = law.mean, np.sqrt(law.var)
        else:
            c, s = law.samples.mean(axis=0), law.samples.std(axis=0) + 1.0
        los.append(c - 4.0 * s)
        his.append(c + 4.0 * s)
    return np.min(los, axis=0), np.max(his, axis=0)


# ---------------------------------------------------------------------------
# evaluation and validation
# ---------------------------------------------------------------------------


def _batch(p: ControlProblem, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, p.state_dim)
    u = u.reshape(-1, p.control_dim)
    if not np.all(p.box.contains(u)):
        raise PreconditionError("control outside the admissible box")
    return x, u, single


def eval_drift(p: ControlProblem, t: float, x, u) -> np.ndarray:
    """Drift ``b(t, x, u)`` for one point (vectors) or a batch (rows)."""
    x, u, single = _batch(p, x, u)
    out = np.asarray(p.dynamics.drift(t, x, u), dtype=float)
    return out[0] if single else out


def eval_cost_rate(p: ControlProblem, t: float, x, u):
    """Running cost ``f(t, x, u)``; a float for a single point."""
    x, u, single = _batch(p, x, u)
    out = np.asarray(p.cost.running(t, x, u), dtype=float)
    return float(out[0]) if single else out


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str) -> None:
        self.checks.append((name, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list:
        return [name for name, ok, _ in self.checks if not ok]

    def __str__(self) -> str:
        lines = [f"[{'pass' if ok else 'FAIL'}] {name}: {detail}" for name, ok, detail in self.checks]
        return "\n".join(lines)


def validate_problem(p: ControlProblem, n_samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Spot-check the boundedness/ellipticity/cost-sign hypotheses by sampling.

    Raises :class:`StructuralError` when a callable returns arrays of the wrong
    shape; all other findings are recorded in the returned report.
    """
    rng = np.random.default_rng(seed)
    d, pdim = p.state_dim, p.control_dim
    lo, hi = p.state_range
    t = rng.random(n_samples) * p.grid.t_end
    x = lo + rng.random((n_samples, d)) * (hi - lo)
    u = p.box.sample(rng, n_samples)
    xi = rng.standard_normal((n_samples, d))

    b = np.empty((n_samples, d))
    f = np.empty(n_samples)
    ellip = np.empty(n_samples)
    for i in range(n_samples):
        bi = np.asarray(p.dynamics.drift(t[i], x[i : i + 1], u[i : i + 1]), dtype=float)
        if bi.shape != (1, d):
            raise StructuralError(f"dynamics: drift returned shape {bi.shape}, expected (1, {d})")
        b[i] = bi[0]
        fi = np.asarray(p.cost.running(t[i], x[i : i + 1], u[i : i + 1]), dtype=float)
        if fi.shape != (1,):
            raise StructuralError(f"cost: running cost returned shape {fi.shape}, expected (1,)")
        f[i] = fi[0]
        cov = p.dynamics.covariance(t[i], x[i : i + 1])
        cov = cov.reshape(d, d)
        ellip[i] = xi[i] @ cov @ xi[i] / (xi[i] @ xi[i])
    if p.dynamics.control_map is not None and p.dynamics.drift_base is not None:
        base = np.asarray(p.dynamics.drift_base(0.0, x[:1]), dtype=float)
        if base.shape != (1, d):
            raise StructuralError(f"dynamics: drift_base returned shape {base.shape}")

    bnorm = np.linalg.norm(b, axis=1)
    report = ValidationReport()
    report.add("finite", np.all(np.isfinite(b)) and np.all(np.isfinite(f)), "drift and cost finite")
    report.add(
        "bounded_drift",
        bnorm.max() <= p.dynamics.b_max * (1 + 1e-12),
        f"max |b| = {bnorm.max():.4g} vs b_max = {p.dynamics.b_max:.4g}",
    )
    c_hat = float(ellip.min())
    report.add(
        "ellipticity",
        c_hat >= p.dynamics.c_sigma and c_hat > 0,
        f"min xi'Sigma xi/|xi|^2 = {c_hat:.4g} vs c_sigma = {p.dynamics.c_sigma:.4g}",
    )
    report.add("running_cost_nonnegative", f.min() >= 0, f"min f = {f.min():.4g}")
    report.add(
        "running_cost_bounded",
        f.max() <= p.cost.f_max * (1 + 1e-12),
        f"max f = {f.max():.4g} vs f_max = {p.cost.f_max:.4g}",
    )
    g = p.cost.g(x)
    report.add(
        "terminal_cost_range",
        g.min() >= 0 and g.max() <= p.cost.g_max * (1 + 1e-12),
        f"g in [{g.min():.4g}, {g.max():.4g}] vs g_max = {p.cost.g_max:.4g}",
    )
    return report


# ---------------------------------------------------------------------------
# builtin instances
# ---------------------------------------------------------------------------


def _ramp(start: float, stop: float, horizon: float):
    def r(t):
        return start + (stop - start) * np.clip(t / horizon, 0.0, 1.0)

    return r


@dataclass(frozen=True)
class HvacParams:
    """Aggregated air-conditioner clusters.

    Defaults are illustrative: temperatures in degrees C, time in hours,
    power in kW. The initial law and the law imposed at the horizon are the
    same Gaussian ``N(mu, diag(nu^2))``. ``kappa`` is set so that half the
    units ON hold each cluster at ``mu`` (``kappa P_max / 2 = theta (x_out - mu)``),
    and ``nu = sigma / sqrt(2 theta)`` is the stationary spread under that
    holding policy, so the fleet must end the event in its normal state.
    """

    d: int = 5
    theta: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.7)
    x_out: Sequence[float] = (30.0,) * 5
    kappa: Sequence[float] = (2.7, 2.88, 3.0, 3.0857142857142856, 3.15)
    p_max: Sequence[float] = (2.0, 2.5, 3.0, 3.5, 4.0)
    sigma: Sequence[float] = (0.3, 0.375, 0.45, 0.525, 0.6)
    x_min: Sequence[float] = (18.0,) * 5
    x_max: Sequence[float] = (24.0,) * 5
    C: float = 10.0
    gamma: Sequence[float] = (1.0,) * 5
    lam: Sequence[float] = (1.0,) * 5
    r_start: float = 0.3
    r_end: float = 0.7
    mu: Sequence[float] = (21.0,) * 5
    nu: Sequence[float] = (0.38729833462074165, 0.4192627457812106, 0.45, 0.4792572378170203, 0.50709255283711)
    horizon: float = 2.0
    steps: int = 24

    def __post_init__(self):
        for name in ("theta", "x_out", "kappa", "p_max", "sigma", "x_min", "x_max", "gamma", "lam", "mu", "nu"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.d,)).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.theta <= 0) or np.any(self.kappa <= 0) or np.any(self.p_max <= 0):
            raise ParameterError("hvac: theta, kappa and p_max must be positive")
        if np.any(self.sigma <= 0) or np.any(self.nu <= 0):
            raise ParameterError("hvac: sigma and nu must be positive")
        if self.C < 0 or np.any(self.gamma < 0) or np.any(self.lam < 0):
            raise ParameterError("hvac: cost weights C, gamma, lambda must be nonnegative")
        if np.any(self.x_min > self.x_max):
            raise ParameterError("hvac: comfort band needs x_min <= x_max")

    @property
    def rho(self) -> np.ndarray:
        return self.p_max / self.p_max.sum()

    def target_profile(self, t):
        return _ramp(self.r_start, self.r_end, self.horizon)(t)


def build_hvac_instance(params: HvacParams | None = None) -> ControlProblem:
    """Aggregated temperature dynamics with a consumption-tracking running cost.

    ``dX^i = -theta^i (X^i - x_out^i) dt - kappa^i P_max^i u^i dt + sigma^i dW^i``
    on ``U = [0, 1]^d`` with the terminal law constrained to ``N(mu, diag(nu^2))``.
    """
    hp = params or HvacParams()
    d = hp.d
    theta, x_out = np.array(hp.theta), np.array(hp.x_out)
    gain = np.array(hp.kappa) * np.array(hp.p_max)
    rho = hp.rho
    gam, lam = np.array(hp.gamma), np.array(hp.lam)
    x_lo, x_hi = np.array(hp.x_min), np.array(hp.x_max)
    C = float(hp.C)
    r = _ramp(hp.r_start, hp.r_end, hp.horizon)

    def base(t, x):
        return -theta * (x - x_out)

    def drift(t, x, u):
        return -theta * (x - x_out) - gain * u

    def running(t, x, u):
        track = C * (u @ rho - r(t)) ** 2
        ru = rho * u
        comfort = lam * (np.maximum(x - x_hi, 0.0) ** 2 + np.maximum(x_lo - x, 0.0) ** 2)
        return track + np.sum(gam * ru**2 + comfort, axis=1) / d

    def running_grad(t, x, u):
        track = 2.0 * C * (u @ rho - r(t))[:, None] * rho
        return track + 2.0 * gam * rho**2 * u / d

    mu, var = np.array(hp.mu), np.array(hp.nu) ** 2
    lo, hi = mu - 6.0 * np.sqrt(var), mu + 6.0 * np.sqrt(var)
    excursion = np.maximum(np.maximum(hi - x_hi, 0.0), np.maximum(x_lo - lo, 0.0))
    f_max = C * max(hp.r_start, hp.r_end, 1.0 - min(hp.r_start, hp.r_end)) ** 2 + np.sum(
        gam * rho**2 + lam * excursion**2
    ) / d
    b_max = float(np.linalg.norm(theta * np.maximum(np.abs(lo - x_out), np.abs(hi - x_out)) + gain))
    sig = np.diag(hp.sigma)
    dyn = DynamicsSpec(
        drift=drift,
        diffusion=sig,
        state_dim=d,
        b_max=b_max,
        c_sigma=float(np.min(hp.sigma) ** 2),
        drift_form="affine",
        drift_base=base,
        control_map=-np.diag(gain),
    )
    cost = CostSpec(running=running, f_max=float(f_max), running_grad=running_grad)
    law = DistributionSpec.gaussian(mu, var)
    return ControlProblem(
        grid=TimeGrid(hp.horizon, hp.steps),
        box=ControlBox(np.zeros(d), np.ones(d)),
        dynamics=dyn,
        cost=cost,
        initial=law,
        constraint=ConstraintSet.terminal_law(law),
        state_range=(lo, hi),
        name="hvac",
    )


@dataclass(frozen=True)
class LqSpec:
    """Scalar problem ``dX = u dt + sigma dW`` with ``f = q x^2 / 2 + r u^2 / 2``."""

    q: float = 1.0
    r: float = 1.0
    sigma: float = 1.0
    horizon: float = 1.0
    steps: int = 100
    u_bound: float = 5.0
    x0: float = 0.0
    x0_var: float = 0.0

    def __post_init__(self):
        if self.q < 0 or self.r <= 0 or self.sigma <= 0 or self.u_bound <= 0 or self.x0_var < 0:
            raise ParameterError("lq: need q >= 0, r > 0, sigma > 0, u_bound > 0, x0_var >= 0")


def build_lq_instance(spec: LqSpec | None = None) -> ControlProblem:
    lq = spec or LqSpec()
    q, r = float(lq.q), float(lq.r)
    x_reach = 4.0 * lq.sigma * np.sqrt(lq.horizon) + abs(lq.x0) + 4.0 * np.sqrt(lq.x0_var)
    rng_ = (np.array([-x_reach]), np.array([x_reach]))

    def drift(t, x, u):
        return np.broadcast_to(u, x.shape).astype(float, copy=True)

    def running(t, x, u):
        return 0.5 * q * x[:, 0] ** 2 + 0.5 * r * u[:, 0] ** 2

    def running_grad(t, x, u):
        return r * u

    initial = (
        DistributionSpec.dirac([lq.x0])
        if lq.x0_var == 0
        else DistributionSpec.gaussian([lq.x0], [lq.x0_var])
    )
    dyn = DynamicsSpec(
        drift=drift,
        diffusion=np.array([[lq.sigma]]),
        state_dim=1,
        b_max=lq.u_bound,
        c_sigma=lq.sigma**2,
        drift_form="linear_in_control",
        drift_base=lambda t, x: np.zeros_like(x),
    )
    cost = CostSpec(
        running=running,
        f_max=0.5 * q * x_reach**2 + 0.5 * r * lq.u_bound**2,
        running_grad=running_grad,
    )
    return ControlProblem(
        grid=TimeGrid(lq.horizon, lq.steps),
        box=ControlBox([-lq.u_bound], [lq.u_bound]),
        dynamics=dyn,
        cost=cost,
        initial=initial,
        state_range=rng_,
        name="lq",
    )


@dataclass(frozen=True)
class BridgeParams:
    """Scalar ``dX = u dt + sigma dW``, ``f = u^2 / 2``, from a point to a Gaussian."""

    x0: float = 0.0
    target_mean: float = 1.0
    target_var: float = 0.25
    sigma: float = 1.0
    horizon: float = 1.0
    steps: int = 50
    u_bound: float = 5.0


def build_bridge_instance(params: BridgeParams | None = None) -> ControlProblem:
    bp = params or BridgeParams()

    def drift(t, x, u):
        return np.broadcast_to(u, x.shape).astype(float, copy=True)

    def running(t, x, u):
        return 0.5 * u[:, 0] ** 2

    dyn = DynamicsSpec(
        drift=drift,
        diffusion=np.array([[bp.sigma]]),
        state_dim=1,
        b_max=bp.u_bound,
        c_sigma=bp.sigma**2,
        drift_form="linear_in_control",
        drift_base=lambda t, x: np.zeros_like(x),
    )
    cost = CostSpec(running=running, f_max=0.5 * bp.u_bound**2, running_grad=lambda t, x, u: u.copy())
    return ControlProblem(
        grid=TimeGrid(bp.horizon, bp.steps),
        box=ControlBox([-bp.u_bound], [bp.u_bound]),
        dynamics=dyn,
        cost=cost,
        initial=DistributionSpec.dirac([bp.x0]),
        constraint=ConstraintSet.terminal_law(
            DistributionSpec.gaussian([bp.target_mean], [bp.target_var])
        ),
        name="bridge",
    )
