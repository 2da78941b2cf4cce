"""Closed-form Q-step on a path ensemble.

The minimizer of ``E^Q[phi] + H(Q|P) / eps`` is a reweighting of the
ensemble: the exponential twist ``w ~ exp(-eps phi)`` when Q is free, and
``w ~ exp(-eps phi) lambda(X_T) / gamma_eps(X_T)`` when the terminal law of
Q is prescribed. Weights are always handled in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import ParameterError, ReweightingError
from .problem import DistributionSpec


@dataclass(frozen=True)
class WeightVector:
    """Normalized importance weights ``w_i ~ dQ/dP(X^i)`` on an ensemble."""

    w: np.ndarray
    log_unnormalized: np.ndarray

    @classmethod
    def from_log(cls, log_w: np.ndarray) -> "WeightVector":
        log_w = np.asarray(log_w, dtype=float)
        if not np.any(np.isfinite(log_w)):
            raise ReweightingError("all log-weights are -inf", starved_fraction=1.0)
        w = np.exp(log_w - logsumexp(log_w))
        w /= w.sum()
        return cls(w, log_w)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, 1.0 / n), np.zeros(n))

    def __len__(self):
        return self.w.size

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.w**2))


@dataclass(frozen=True)
class TwistResult:
    weights: WeightVector
    value: float
    entropy: float
    expected_cost: float
    se: float
    ess_warning: bool = False
    value_closed_form: Optional[float] = None
    starved_fraction: float = 0.0


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0 or not np.isfinite(eps):
        raise ParameterError(f"penalization eps must be positive and finite, got {eps}")
    return eps


def _phi(phi) -> np.ndarray:
    return np.asarray(getattr(phi, "values", phi), dtype=float)


def entropy_from_weights(w) -> float:
    """Empirical relative entropy ``sum_i w_i log(N w_i)`` (``0 log 0 = 0``)."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    return max(float(np.sum(xlogy(w, w.size * w))), 0.0)


def _floor(n: int, ess_floor: Optional[float]) -> float:
    return n / 100.0 if ess_floor is None else ess_floor


def twist_unconstrained(phi, eps: float, ess_floor: Optional[float] = None) -> TwistResult:
    """Exponential twist of the empirical measure.

    ``value = -(1/eps) (logsumexp(-eps phi) - log N)`` is the minimum of
    ``E^Q[phi] + H(Q|P)/eps`` over all reweightings ``Q`` of the sample.
    """
    eps = _check_eps(eps)
    phi = _phi(phi)
    if not np.all(np.isfinite(phi)):
        raise ParameterError("path costs must be finite")
    n = phi.size
    log_w = -eps * phi
    lse = logsumexp(log_w)
    weights = WeightVector.from_log(log_w)
    entropy = max(float(weights.w @ (log_w - lse + np.log(n))), 0.0)
    expected = float(weights.w @ phi)
    value = -(lse - np.log(n)) / eps
    shift = phi.min()
    z = np.exp(-eps * (phi - shift))
    se = float(z.std(ddof=1) / (eps * np.sqrt(n) * z.mean())) if n > 1 else 0.0
    return TwistResult(
        weights=weights,
        value=float(value),
        entropy=entropy,
        expected_cost=expected,
        se=se,
        ess_warning=weights.ess < _floor(n, ess_floor),
    )


def twist_terminal_law(
    phi,
    terminal_states: np.ndarray,
    target: DistributionSpec,
    eps: float,
    est=None,
    ess_floor: Optional[float] = None,
) -> TwistResult:
    """Reweighting that minimizes the penalized cost subject to ``Q_T = target``.

    ``log w_i = -eps phi_i + log lambda_i - log gamma_i`` where ``lambda`` is
    the estimated density ratio ``d target / d P_T`` and ``gamma`` the
    regression of ``exp(-eps phi)`` on ``X_T``. ``value`` is the penalized
    cost of the weighted sample, ``E^Q[phi] + H(Q|P)/eps``; the population
    expression ``(1/eps) E^Q[log(lambda/gamma)]`` is kept in
    ``value_closed_form``.
    """
    from .estimate import RegressionConfig, conditional_expectation, density_ratio

    eps = _check_eps(eps)
    phi = _phi(phi)
    if not target.has_density:
        raise ParameterError("terminal target must have an evaluable density")
    cfg = est or RegressionConfig()
    xt = np.asarray(terminal_states, dtype=float).reshape(phi.size, -1)
    n = phi.size

    with np.errstate(divide="ignore"):
        log_lam = np.log(density_ratio(target, xt, cfg, strict=False))
    shift = phi.min()
    tilt = np.exp(-eps * (phi - shift))
    gam = conditional_expectation(xt, tilt, None, xt, cfg)
    with np.errstate(divide="ignore"):
        log_gam = np.log(gam) - eps * shift
    starved = ~np.isfinite(log_gam) | np.isnan(log_lam) | (log_lam == np.inf)
    if starved.any():
        frac = float(starved.mean())
        raise ReweightingError(
            f"terminal reweighting starved on {frac:.2%} of samples (target outside P_T support)",
            starved_fraction=frac,
        )
    log_ratio = log_lam - log_gam
    log_w = -eps * phi + log_ratio
    lse = logsumexp(log_w)
    weights = WeightVector.from_log(log_w)
    w = weights.w
    support = w > 0
    entropy = max(float(w[support] @ (log_w[support] - lse + np.log(n))), 0.0)
    expected = float(w @ phi)
    value = expected + entropy / eps
    closed = float(w[support] @ log_ratio[support]) / eps
    h = np.where(support, phi + (log_w - lse + np.log(n)) / eps, 0.0)
    se = float(np.sqrt(np.sum(w**2 * (h - value) ** 2)))
    return TwistResult(
        weights=weights,
        value=float(value),
        entropy=entropy,
        expected_cost=expected,
        se=se,
        ess_warning=weights.ess < _floor(n, ess_floor),
        value_closed_form=closed,
        starved_fraction=float(np.mean(~np.isfinite(log_lam))),
    )


class DvGap(NamedTuple):
    gap: float
    bound: float
    se: float
    se_diff: float


def dv_gap_check(phi, eps: float) -> DvGap:
    """Gap ``mean(phi) - value`` and its bound ``(eps/2) Var[phi]``.

    ``se`` is a delta-method standard error of the gap and ``se_diff`` that of
    ``gap - bound``; the gap is expected in ``[-3 se, bound + 3 se]``.
    """
    eps = _check_eps(eps)
    phi = _phi(phi)
    n = phi.size
    res = twist_unconstrained(phi, eps)
    m1 = phi.mean()
    gap = float(m1 - res.value)
    bound = float(0.5 * eps * phi.var())
    if n < 2 or np.ptp(phi) == 0:
        return DvGap(gap, bound, 0.0, 0.0)
    z = np.exp(-eps * (phi - phi.min()))
    m2 = z.mean()
    cov = np.cov(np.vstack([phi, z, phi**2]))
    g_gap = np.array([1.0, 1.0 / (eps * m2), 0.0])
    g_diff = np.array([1.0 + eps * m1, 1.0 / (eps * m2), -0.5 * eps])
    se = float(np.sqrt(max(g_gap @ cov @ g_gap, 0.0) / n))
    se_diff = float(np.sqrt(max(g_diff @ cov @ g_diff, 0.0) / n))
    return DvGap(gap, bound, se, se_diff)
