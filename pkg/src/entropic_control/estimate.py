"""Nonparametric estimators used by the Q- and P-steps.

* :func:`conditional_expectation` -- weighted kNN or Nadaraya-Watson regression;
* :func:`density_ratio` -- target density over a Gaussian KDE of the sample;
* :func:`nelson_drift` -- drift of a reweighted path measure, regressed from
  forward increments ``(X_{m+1} - X_m) / dt``.

One dimensional kNN uses a sorted-window algorithm with prefix sums (the
``k`` nearest neighbours of a point on the line are contiguous once the
sample is sorted); higher dimensions use :class:`scipy.spatial.cKDTree`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import _kde
from .errors import EstimationError, ParameterError, PreconditionError
from .problem import ControlProblem, DistributionSpec


@dataclass(frozen=True)
class RegressionConfig:
    """Estimator settings.

    ``n_anchors`` limits the number of support points per time slice at
    which the drift field is tabulated (``None`` uses every path).
    ``kde_max_centers`` caps the number of KDE centres (an evenly strided
    subset) for multi-dimensional density estimates. ``density`` selects
    the estimate of the sample law in :func:`density_ratio`: a Gaussian KDE
    or a moment-matched Gaussian (cheap, and free of the KDE's tail bias in
    several dimensions when the sample law is close to Gaussian).
    """

    method: Literal["knn", "gaussian_kernel"] = "knn"
    k: int = 200
    bandwidth: float | str = "scott"
    min_neighbors: int = 2
    n_anchors: Optional[int] = None
    control_variate: bool = True
    kde_max_centers: Optional[int] = None
    density: Literal["kde", "gaussian"] = "kde"

    def __post_init__(self):
        if self.method not in ("knn", "gaussian_kernel"):
            raise ParameterError(f"unknown regression method {self.method!r}")
        if self.method == "knn" and int(self.k) < 1:
            raise ParameterError("knn regression needs k >= 1")
        if self.bandwidth != "scott" and not float(self.bandwidth) > 0:
            raise ParameterError("kernel bandwidth must be positive or 'scott'")
        if self.min_neighbors < 1:
            raise ParameterError("min_neighbors must be >= 1")
        if self.density not in ("kde", "gaussian"):
            raise ParameterError(f"unknown density estimate {self.density!r}")


# ---------------------------------------------------------------------------
# neighbourhood machinery
# ---------------------------------------------------------------------------


def _query_order(q: np.ndarray, n_support: int) -> np.ndarray:
    # sorting queries pays off only once the support no longer fits in cache
    if n_support > 32768 and q.size > 1024:
        return np.argsort(q)
    return np.arange(q.size)


class _Neighbourhoods:
    """k-nearest-neighbour sets of ``queries`` within ``support``.

    Averages over these sets with arbitrary per-sample weights are then
    cheap: prefix sums in one dimension, gathered indices otherwise.
    """

    def __init__(self, support: np.ndarray, queries: np.ndarray, k: int):
        n, d = support.shape
        self.n = n
        self.k = min(int(k), n)
        self.degenerate = n > 0 and np.all(np.ptp(support, axis=0) == 0)
        self.one_d = d == 1
        if self.degenerate:
            return
        if self.one_d:
            self.order = np.argsort(support[:, 0], kind="stable")
            xs = support[self.order, 0]
            # sorted queries keep the binary searches cache friendly
            q_order = self.order if queries is support else _query_order(queries[:, 0], n)
            q = queries[q_order, 0]
            k_ = self.k
            lo = np.clip(np.searchsorted(xs, q, side="left") - k_, 0, n - k_)
            hi = np.clip(np.searchsorted(xs, q, side="right"), 0, n - k_)
            lo = np.minimum(lo, hi)
            # first window start l with xs[l+k] - q >= q - xs[l]; monotone in l
            while True:
                active = lo < hi
                if not active.any():
                    break
                mid = (lo + hi) // 2
                right = np.minimum(mid + k_, n - 1)
                move = (mid + k_ < n) & (xs[right] - q < q - xs[mid])
                lo = np.where(active & move, mid + 1, lo)
                hi = np.where(active & ~move, mid, hi)
            # exact ties at the query (e.g. a Dirac initial law) use every tied sample
            tie_lo = np.searchsorted(xs, q, side="left")
            tie_hi = np.searchsorted(xs, q, side="right")
            wide = (tie_hi - tie_lo) > k_
            self.lo = np.empty_like(lo)
            self.hi = np.empty_like(lo)
            self.lo[q_order] = np.where(wide, tie_lo, lo)
            self.hi[q_order] = np.where(wide, tie_hi, lo + k_)
        else:
            tree = cKDTree(support)
            if queries is support:
                # the tree's leaf order keeps consecutive queries close in space
                idx = np.empty((n, self.k), dtype=np.intp)
                idx[tree.indices] = tree.query(support[tree.indices], k=self.k)[1].reshape(n, self.k)
            else:
                idx = tree.query(queries, k=self.k)[1]
            self.idx = idx.reshape(queries.shape[0], self.k)

    def average(self, values: np.ndarray, weights: np.ndarray):
        """Weighted means of ``values`` (N, r) and the summed weight per query."""
        if self.degenerate:
            tot = weights.sum()
            mean = (weights @ values) / tot if tot > 0 else np.full(values.shape[1], np.nan)
            return None, mean, tot
        if self.one_d:
            w = weights[self.order]
            v = values[self.order]
            sw = np.concatenate(([0.0], np.cumsum(w)))
            swv = np.vstack([np.zeros((1, v.shape[1])), np.cumsum(w[:, None] * v, axis=0)])
            den = sw[self.hi] - sw[self.lo]
            num = swv[self.hi] - swv[self.lo]
        else:
            w = weights[self.idx]
            den = w.sum(axis=1)
            num = np.einsum("qk,qkr->qr", w, values[self.idx])
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / den[:, None], None, den

    def local_ess(self, weights: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.array([weights.sum() ** 2 / np.sum(weights**2)])
        if self.one_d:
            w = weights[self.order]
            s1 = np.concatenate(([0.0], np.cumsum(w)))
            s2 = np.concatenate(([0.0], np.cumsum(w**2)))
            a = s1[self.hi] - s1[self.lo]
            b = s2[self.hi] - s2[self.lo]
        else:
            w = weights[self.idx]
            a, b = w.sum(axis=1), np.sum(w**2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(b > 0, a**2 / b, 0.0)


def _expand(avg, mean, nq):
    return np.tile(mean, (nq, 1)) if avg is None else avg


def _bandwidth(cfg: RegressionConfig, x: np.ndarray, weights=None) -> np.ndarray:
    if cfg.bandwidth == "scott":
        return _kde.scott_bandwidth(x, weights)
    return np.full(x.shape[1], float(cfg.bandwidth))


class NearestIndex:
    """Nearest-support-point lookup, built once and queried many times."""

    def __init__(self, support: np.ndarray):
        self.support = support
        if support.shape[1] == 1:
            self.order = np.argsort(support[:, 0], kind="stable")
            self.xs = support[self.order, 0]
            self.tree = None
        else:
            self.tree = cKDTree(support)

    def __call__(self, queries: np.ndarray) -> np.ndarray:
        if self.tree is not None:
            return self.tree.query(queries, k=1)[1]
        xs = self.xs
        last = len(xs) - 1
        q_order = _query_order(queries[:, 0], xs.size)
        q = queries[q_order, 0]
        pos = np.clip(np.searchsorted(xs, q), 1, max(last, 1))
        right = np.minimum(pos, last)
        left = np.abs(q - xs[pos - 1]) <= np.abs(xs[right] - q)
        out = np.empty(q.size, dtype=np.int64)
        out[q_order] = self.order[np.where(left, pos - 1, right)]
        return out


def _nearest(support: np.ndarray, queries: np.ndarray) -> np.ndarray:
    return NearestIndex(support)(queries)


def _kernel_average(x, values, weights, queries, h):
    """Nadaraya-Watson means; rows whose kernel weights all underflow are NaN."""
    num = _kde.kernel_sum(x, weights[:, None] * values, queries, h)
    den = _kde.kernel_sum(x, weights, queries, h)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den[:, None]
    out[~(den > 0)] = np.nan
    return out, den


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


def conditional_expectation(
    x_samples,
    y_samples,
    weights=None,
    queries=None,
    cfg: RegressionConfig | None = None,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """Estimate ``E[Y | X = q]`` at each query.

    ``knn``: (weighted) mean of ``y`` over the ``k`` nearest samples;
    ``gaussian_kernel``: Nadaraya-Watson with the configured bandwidth.
    Queries where every kernel weight underflows fall back to the nearest
    sample; their count is stored in ``diagnostics["nn_fallback"]``.
    """
    cfg = cfg or RegressionConfig()
    x = _kde.as_points(x_samples)
    y = np.asarray(y_samples, dtype=float)
    vector_y = y.ndim == 2
    y2 = y.reshape(x.shape[0], -1)
    q = x if queries is None else _kde.as_points(queries)
    n = x.shape[0]
    if n < cfg.min_neighbors:
        raise PreconditionError(f"need at least {cfg.min_neighbors} samples, got {n}")
    w = np.ones(n) if weights is None else np.asarray(getattr(weights, "w", weights), dtype=float)

    if cfg.method == "knn":
        hood = _Neighbourhoods(x, q, cfg.k)
        avg, mean, den = hood.average(y2, w)
        out = _expand(avg, mean, q.shape[0])
        bad = ~np.all(np.isfinite(out), axis=1)
    else:
        out, _ = _kernel_average(x, y2, w, q, _bandwidth(cfg, x))
        bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        out[bad] = y2[_nearest(x, q[bad])]
    if diagnostics is not None:
        diagnostics["nn_fallback"] = int(bad.sum())
    return out if vector_y else out[:, 0]


def _gaussian_logpdf(x: np.ndarray) -> np.ndarray:
    """Log-density of the Gaussian with the sample mean and covariance of ``x``."""
    n, d = x.shape
    if n <= d:
        raise EstimationError("need more samples than dimensions for a Gaussian fit")
    c = x - x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise EstimationError("sample covariance is singular") from None
    z = np.linalg.solve(chol, c.T)
    return -0.5 * np.sum(z**2, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * d * np.log(2.0 * np.pi)


def density_ratio(
    target: DistributionSpec,
    samples,
    cfg: RegressionConfig | None = None,
    leave_one_out: bool = False,
    strict: bool = True,
) -> np.ndarray:
    """``target_density(X_i) / KDE(X_i)`` with a Gaussian KDE of the samples.

    With ``cfg.density == "gaussian"`` the KDE is replaced by the fitted
    Gaussian. Bandwidth follows Scott's rule (on the centres actually used) unless
    ``cfg.bandwidth`` is fixed. With ``cfg.kde_max_centers`` the KDE sums
    over an evenly strided subset of the samples, augmented per query by
    the query's own kernel.
    A zero KDE value raises :class:`EstimationError` when ``strict``;
    otherwise the ratio is ``inf`` there.
    """
    cfg = cfg or RegressionConfig()
    x = _kde.as_points(samples)
    n = x.shape[0]
    if cfg.density == "gaussian":
        return np.exp(target.logpdf(x) - _gaussian_logpdf(x))
    centers, idx = x, None
    if cfg.kde_max_centers is not None and n > cfg.kde_max_centers and x.shape[1] > 1:
        idx = np.linspace(0, n - 1, cfg.kde_max_centers).astype(np.int64)
        centers = x[idx]
    h = _bandwidth(cfg, centers)
    m = centers.shape[0]
    kde = _kde.kernel_sum(centers, np.full(m, 1.0 / m), x, h)
    self_k = 1.0 / (np.prod(h) * (2.0 * np.pi) ** (x.shape[1] / 2.0))
    if idx is not None:
        # a sample outside the centre subset joins it, so every sample sees
        # its own kernel as in the full estimate; this bounds the ratio in
        # sparse tails
        own = np.ones(n, dtype=bool)
        own[idx] = False
        kde[own] = (kde[own] * m + self_k) / (m + 1)
    elif leave_one_out and n > 1:
        kde = (kde * n - self_k) / (n - 1)
    kde = np.maximum(kde, 0.0)
    if strict and np.any(kde <= 0):
        raise EstimationError(f"KDE vanished at {int(np.sum(kde <= 0))} samples")
    dens = np.exp(target.logpdf(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(kde > 0, dens / np.where(kde > 0, kde, 1.0), np.inf)


@dataclass
class DriftField:
    """Estimated drift ``beta(t_m, x)`` of a reweighted ensemble.

    Values are tabulated at anchor points of every time slice (all paths
    unless ``RegressionConfig.n_anchors`` is set); :meth:`__call__`
    re-runs the regression at arbitrary states.
    """

    support: np.ndarray  # (N, M+1, d) states
    targets: np.ndarray  # (N, M, d) increment quotients, less the reference drift if any
    noise: Optional[np.ndarray]  # (N, M, d) diffusion part of the quotients, or None
    weights: np.ndarray
    cfg: RegressionConfig
    anchor_idx: np.ndarray
    anchor_values: list = field(default_factory=list)
    widened: int = 0
    reference: Optional[Callable[[int, np.ndarray], np.ndarray]] = None  # known drift, added back exactly

    @property
    def steps(self) -> int:
        return self.targets.shape[1]

    def anchors(self, m: int) -> np.ndarray:
        if self.anchor_idx.size == self.support.shape[0]:
            return self.support[:, m]
        return self.support[self.anchor_idx, m]

    def _estimate(self, m: int, queries: np.ndarray) -> np.ndarray:
        x = self.support[:, m]
        if queries is not x and queries.shape == x.shape and np.shares_memory(queries, x) and np.array_equal(queries, x):
            queries = x
        y = self.targets[:, m]
        w = self.weights
        cfg = self.cfg
        if cfg.method == "knn":
            k = cfg.k
            for attempt in range(2):
                hood = _Neighbourhoods(x, queries, k)
                ess = hood.local_ess(w)
                if np.all(ess >= min(cfg.min_neighbors, hood.k) * (1 - 1e-9)):
                    break
                if attempt == 0:
                    k = 2 * k
                    self.widened += 1
                else:
                    raise EstimationError(
                        f"slice {m}: local effective sample size {float(ess.min()):.3g} below "
                        f"min_neighbors={cfg.min_neighbors} after widening to k={k}"
                    )
            avg, mean, _ = hood.average(y, w)
            est = _expand(avg, mean, queries.shape[0])
            if self.noise is not None:
                navg, nmean, _ = hood.average(self.noise[:, m], np.ones_like(w))
                est = est - _expand(navg, nmean, queries.shape[0])
        else:
            h = _bandwidth(cfg, x)
            est, _ = _kernel_average(x, y, w, queries, h)
            if self.noise is not None:
                nav, _ = _kernel_average(x, self.noise[:, m], np.ones_like(w), queries, h)
                est = est - nav
        if self.reference is not None:
            est = est + self.reference(m, queries)
        bad = ~np.all(np.isfinite(est), axis=1)
        if bad.any():
            raise EstimationError(f"slice {m}: drift undefined at {int(bad.sum())} queries")
        return est

    def tabulate(self) -> None:
        self.anchor_values = [self._estimate(m, self.anchors(m)) for m in range(self.steps)]

    def at_anchors(self, m: int) -> np.ndarray:
        if not self.anchor_values:
            self.tabulate()
        return self.anchor_values[m]

    def __call__(self, m: int, x) -> np.ndarray:
        """Regression estimate at arbitrary states; outside the support box the
        value at the nearest support point is returned."""
        q = _kde.as_points(x)
        sup = self.support[:, m]
        inside = np.all((q >= sup.min(axis=0)) & (q <= sup.max(axis=0)), axis=1)
        out = np.empty((q.shape[0], sup.shape[1]))
        if inside.any():
            out[inside] = self._estimate(m, q[inside])
        if (~inside).any():
            near = _nearest(sup, q[~inside])
            out[~inside] = self._estimate(m, sup[near])
        return out


def nelson_drift(
    ensemble,
    weights,
    cfg: RegressionConfig | None = None,
    problem: ControlProblem | None = None,
    policy=None,
) -> DriftField:
    """Drift of the reweighted ensemble from forward increments.

    The field regresses ``(X[m+1] - X[m]) / dt`` on ``X[m]`` with the path
    weights. When ``problem`` is given and ``cfg.control_variate`` is on, the
    diffusion part ``sigma sqrt(dt) xi / dt`` of each quotient, whose
    unweighted conditional mean is zero, is averaged over the same
    neighbourhood with uniform weights and subtracted. If in addition the
    ``policy`` that generated the ensemble is given, its drift
    ``b(t, x, u(t, x))`` is subtracted from every quotient and added back
    exactly at the query points, so only the reweighting correction is
    smoothed. This removes the bias that wide neighbourhoods put on a
    state-dependent drift.
    """
    cfg = cfg or RegressionConfig()
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    states = ensemble.states
    n = states.shape[0]
    if w.shape != (n,):
        raise PreconditionError("weights and ensemble have different sizes")
    dt = ensemble.grid.dt
    targets = np.diff(states, axis=1) / dt
    noise = None
    if problem is not None and cfg.control_variate:
        from .simulate import _diffuse

        noise = np.empty_like(targets)
        for m in range(targets.shape[1]):
            noise[:, m] = _diffuse(problem, ensemble.grid.time(m), states[:, m], ensemble.increments[:, m])
        noise /= np.sqrt(dt)
    n_a = n if cfg.n_anchors is None else min(int(cfg.n_anchors), n)
    anchor_idx = np.arange(n) if n_a == n else np.linspace(0, n - 1, n_a).astype(np.int64)
    reference = None
    if noise is not None and policy is not None:
        grid, drift = ensemble.grid, problem.dynamics.drift

        def reference(m, x):
            return drift(grid.time(m), x, policy(m, x))

        for m in range(targets.shape[1]):
            targets[:, m] -= drift(grid.time(m), states[:, m], ensemble.controls[:, m])

    field_ = DriftField(states, targets, noise, w, cfg, anchor_idx, reference=reference)
    field_.tabulate()
    return field_
