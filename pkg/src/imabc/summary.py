"""Weighted posterior summaries."""
from __future__ import annotations

import numpy as np


def _normalized(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector")
    total = w.sum()
    if not total > 0:
        raise ValueError("empty posterior: weights sum to zero")
    return w / total


def weighted_mean(x, w) -> np.ndarray:
    return _normalized(w) @ np.asarray(x, dtype=float)


def weighted_sd(x, w) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = _normalized(w)
    mu = w @ x
    return np.sqrt(w @ (x - mu) ** 2)


def weighted_quantile(x, w, q) -> np.ndarray:
    """Inverse of the weighted empirical cdf; always an observed value."""
    x = np.asarray(x, dtype=float)
    w = _normalized(w)
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    pos = np.searchsorted(cw, np.asarray(q, dtype=float) * cw[-1], side="left")
    return x[order][np.clip(pos, 0, x.size - 1)]


def posterior_table(names, theta, w, probs=(0.025, 0.975)) -> list[dict]:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    rows = []
    for j, name in enumerate(names):
        col = theta[:, j]
        row = {"parameter": name, "mean": float(weighted_mean(col, w)),
               "sd": float(weighted_sd(col, w))}
        for p in probs:
            row[f"p{100 * p:g}"] = float(weighted_quantile(col, w, p))
        rows.append(row)
    return rows


def density_grid(x, y, w, bins: int = 40) -> list[dict]:
    """Weighted bivariate density on a regular grid (long format)."""
    w = _normalized(w)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = (x.min(), x.max()) if x.max() > x.min() else (x.min() - 0.5, x.max() + 0.5)
    ry = (y.min(), y.max()) if y.max() > y.min() else (y.min() - 0.5, y.max() + 0.5)
    dens, ex, ey = np.histogram2d(x, y, bins=bins, range=[rx, ry], weights=w, density=True)
    cx, cy = 0.5 * (ex[:-1] + ex[1:]), 0.5 * (ey[:-1] + ey[1:])
    return [{"x": float(cx[i]), "y": float(cy[k]), "density": float(dens[i, k])}
            for i in range(bins) for k in range(bins)]
