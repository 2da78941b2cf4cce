"""Gaussian kernel density primitives shared by ``problem`` and ``estimate``.

One dimensional estimates with many points go through linear binning and an
FFT convolution; everything else is a direct (chunked) kernel sum.
"""

from __future__ import annotations

import numpy as np

_BINNED_MIN_POINTS = 4096
_GRID_SIZE = 4096
_CHUNK = 2048


def as_points(a) -> np.ndarray:
    """Coerce to an ``(n, d)`` float array; 1-d input is read as ``n`` scalars."""
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim <= 1 else a


def scott_bandwidth(samples: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Per-dimension Scott bandwidth ``sd * n_eff ** (-1 / (d + 4))``."""
    samples = as_points(samples)
    n, d = samples.shape
    if weights is None:
        sd = samples.std(axis=0, ddof=1) if n > 1 else np.ones(d)
        n_eff = float(n)
    else:
        w = weights / weights.sum()
        mean = w @ samples
        sd = np.sqrt(w @ (samples - mean) ** 2)
        n_eff = 1.0 / np.sum(w**2)
    sd = np.where(sd > 0, sd, 1.0)
    return sd * n_eff ** (-1.0 / (d + 4))


def _binned_1d(centers, weights, queries, h):
    lo = min(centers.min(), queries.min()) - 5.0 * h
    hi = max(centers.max(), queries.max()) + 5.0 * h
    grid = np.linspace(lo, hi, _GRID_SIZE)
    delta = grid[1] - grid[0]
    pos = (centers - lo) / delta
    left = np.clip(np.floor(pos).astype(np.int64), 0, _GRID_SIZE - 2)
    frac = pos - left
    counts = np.bincount(left, weights * (1.0 - frac), minlength=_GRID_SIZE)
    counts += np.bincount(left + 1, weights * frac, minlength=_GRID_SIZE)
    half = int(np.ceil(6.0 * h / delta))
    offsets = np.arange(-half, half + 1) * delta
    kernel = np.exp(-0.5 * (offsets / h) ** 2) / (np.sqrt(2.0 * np.pi) * h)
    size = _GRID_SIZE + kernel.size - 1
    nfft = 1 << int(np.ceil(np.log2(size)))
    conv = np.fft.irfft(np.fft.rfft(counts, nfft) * np.fft.rfft(kernel, nfft), nfft)
    dens = conv[half : half + _GRID_SIZE]
    return np.interp(queries, grid, dens)


def _grid_fine_enough(centers, queries, h):
    span = max(centers.max(), queries.max()) - min(centers.min(), queries.min()) + 10.0 * h
    return span / (_GRID_SIZE - 1) <= 0.25 * h


def _direct(centers, weights, queries, h):
    d = centers.shape[1]
    cs = centers / h
    qs = queries / h
    norm = np.prod(h) * (2.0 * np.pi) ** (d / 2.0)
    c2 = np.sum(cs**2, axis=1)
    out = np.empty((queries.shape[0],) + np.shape(weights)[1:])
    for start in range(0, queries.shape[0], _CHUNK):
        q = qs[start : start + _CHUNK]
        sq = np.sum(q**2, axis=1)[:, None] + c2[None, :] - 2.0 * q @ cs.T
        np.maximum(sq, 0.0, out=sq)
        out[start : start + _CHUNK] = np.exp(-0.5 * sq) @ weights
    return out / norm


def kernel_sum(centers, coef, queries, h) -> np.ndarray:
    """``sum_j coef_j K_h(q - c_j)`` for a normalized product-Gaussian kernel."""
    centers = as_points(centers)
    queries = as_points(queries)
    coef = np.asarray(coef, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), (centers.shape[1],)).copy()
    if centers.shape[1] == 1 and centers.shape[0] >= _BINNED_MIN_POINTS and _grid_fine_enough(centers, queries, h[0]):
        if coef.ndim == 1:
            return _binned_1d(centers[:, 0], coef, queries[:, 0], float(h[0]))
        cols = [_binned_1d(centers[:, 0], c, queries[:, 0], float(h[0])) for c in coef.T]
        return np.stack(cols, axis=1)
    return _direct(centers, coef, queries, h)


def gaussian_kde(
    centers: np.ndarray,
    queries: np.ndarray,
    bandwidth: np.ndarray | float | None = None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate a (weighted) product-Gaussian KDE of ``centers`` at ``queries``.

    Weights are normalized to sum to one, so the result is a probability
    density. ``bandwidth`` defaults to Scott's rule.
    """
    centers = as_points(centers)
    queries = as_points(queries)
    n, d = centers.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
    h = scott_bandwidth(centers, None if weights is None else w) if bandwidth is None else bandwidth
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    return np.maximum(kernel_sum(centers, w, queries, h), 0.0)
