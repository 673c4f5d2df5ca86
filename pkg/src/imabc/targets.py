"""Calibration targets, tolerance intervals and fit statistics.

A target's tolerance interval at level alpha is a two-sided (1 - alpha)
normal interval around the observed value. Acceptance of a simulated value
``s`` at level alpha is equivalent to ``p_value(s) >= alpha``; the engine uses
the p-value form so that tolerances set from observed p-values re-accept the
point they came from exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

NORMAL_SE = "normal_se"
EXPLICIT_BOUNDS = "explicit_bounds"


class ScheduleError(ValueError):
    pass


class TargetConfigError(ValueError):
    pass


def z_two_sided(alpha):
    """Normal quantile z_(1 - alpha/2); infinite at alpha = 0."""
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(divide="ignore"):
        return (-ndtri(0.5 * alpha))[()]


@dataclass(frozen=True)
class TargetSpec:
    id: str
    observed: float
    interval_form: str = NORMAL_SE
    se: float = float("nan")
    final_lower: float = float("nan")
    final_upper: float = float("nan")
    upper_extension: float = 0.0
    lower_floor: float = -math.inf
    alpha_init: float = 0.0
    alpha_final: float = 0.05
    sim_sample_size: int = 1
    cost_rank: int = 1

    def __post_init__(self):
        if self.interval_form not in (NORMAL_SE, EXPLICIT_BOUNDS):
            raise TargetConfigError(f"{self.id}: unknown interval form {self.interval_form!r}")
        if not (0.0 <= self.alpha_init <= self.alpha_final < 1.0) or self.alpha_final <= 0:
            raise TargetConfigError(f"{self.id}: need 0 <= alpha_init <= alpha_final < 1")
        if self.upper_extension < 0:
            raise TargetConfigError(f"{self.id}: upper_extension must be >= 0")
        if self.interval_form == NORMAL_SE:
            if not self.se > 0:
                raise TargetConfigError(f"{self.id}: se must be positive")
        else:
            if not (self.final_lower <= self.observed < self.final_upper):
                raise TargetConfigError(f"{self.id}: explicit bounds must bracket observed")
            if self.final_lower == self.observed:
                raise TargetConfigError(f"{self.id}: explicit lower bound equals observed")
            if self.upper_extension:
                raise TargetConfigError(f"{self.id}: explicit bounds already include any extension")
        if self.sim_sample_size < 1:
            raise TargetConfigError(f"{self.id}: sim_sample_size must be >= 1")

    @property
    def side_se(self) -> tuple[float, float]:
        """Effective standard errors below and above the observed value."""
        if self.interval_form == NORMAL_SE:
            return self.se, self.se
        z = float(z_two_sided(self.alpha_final))
        return (self.observed - self.final_lower) / z, (self.final_upper - self.observed) / z

    @property
    def extension(self) -> float:
        return self.upper_extension * abs(self.observed)


def tolerance_interval(target: TargetSpec, alpha: float) -> tuple[float, float]:
    if alpha > target.alpha_final:
        raise ScheduleError(f"{target.id}: alpha {alpha} exceeds final alpha {target.alpha_final}")
    if alpha <= 0:
        return -math.inf, math.inf
    z = float(z_two_sided(alpha))
    se_lo, se_hi = target.side_se
    lower = max(target.lower_floor, target.observed - z * se_lo)
    upper = target.observed + z * se_hi + target.extension
    return lower, upper


def p_value(target: TargetSpec, s: float) -> float:
    """Two-sided normal p-value of ``s`` using the SE on s's side."""
    return float(TargetSet([target]).p_values(np.array([[s]]))[0, 0])


class TargetSet:
    """Ordered collection of targets with vectorized fit statistics."""

    def __init__(self, targets: Iterable[TargetSpec]):
        self.targets = list(targets)
        self.ids = [t.id for t in self.targets]
        if len(set(self.ids)) != len(self.ids):
            raise TargetConfigError("duplicate target ids")
        self.observed = np.array([t.observed for t in self.targets], dtype=float)
        se = np.array([t.side_se for t in self.targets], dtype=float).reshape(-1, 2)
        self.se_lo, self.se_hi = se[:, 0], se[:, 1]
        self.ext = np.array([t.extension for t in self.targets], dtype=float)
        self.floor = np.array([t.lower_floor for t in self.targets], dtype=float)
        self.alpha_init = np.array([t.alpha_init for t in self.targets], dtype=float)
        self.alpha_final = np.array([t.alpha_final for t in self.targets], dtype=float)
        self.cost_rank = np.array([t.cost_rank for t in self.targets], dtype=int)

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.targets[self.ids.index(key)]
        return self.targets[key]

    def groups(self) -> list[tuple[int, list[int]]]:
        """Target indices grouped by cost rank, cheapest first."""
        ranks = sorted(set(self.cost_rank.tolist()))
        return [(r, [j for j in range(len(self)) if self.cost_rank[j] == r]) for r in ranks]

    def subset(self, idx: Sequence[int]) -> "TargetSet":
        return TargetSet([self.targets[j] for j in idx])

    def p_values(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        diff = S - self.observed
        below = diff < 0
        with np.errstate(invalid="ignore", divide="ignore"):
            z_lo = -diff / self.se_lo
            z_hi = np.maximum(diff - self.ext, 0.0) / self.se_hi
            z = np.where(below, z_lo, z_hi)
            p = np.minimum(2.0 * ndtr(-z), 1.0)
        p = np.where(diff == 0, 1.0, p)
        p = np.where(S < self.floor, 0.0, p)
        return np.where(np.isnan(S), 0.0, p)

    def accept_matrix(self, S, alphas) -> np.ndarray:
        """Per-target acceptance indicators delta_j at levels ``alphas``."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        alphas = np.asarray(alphas, dtype=float)
        ok = (self.p_values(S) >= alphas) & (S >= self.floor)
        return ok | (alphas <= 0)

    def accept(self, S, alphas) -> np.ndarray:
        return self.accept_matrix(S, alphas).all(axis=1)

    def min_p_value(self, S) -> np.ndarray:
        return self.p_values(S).min(axis=1)

    def discrepancy(self, S, alphas) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        active = np.asarray(alphas, dtype=float) < self.alpha_final
        if not active.any():
            return np.zeros(S.shape[0])
        if np.any(self.observed[active] == 0):
            bad = [self.ids[j] for j in np.flatnonzero(active & (self.observed == 0))]
            raise ValueError(f"relative distance undefined for zero-valued targets {bad}")
        rel = (S[:, active] - self.observed[active]) / self.observed[active]
        d = (rel * rel).sum(axis=1)
        return np.where(np.isnan(d), np.inf, d)

    def intervals(self, alphas) -> list[tuple[float, float]]:
        return [tolerance_interval(t, a) for t, a in zip(self.targets, alphas)]


def delta_accept(targets: TargetSet, s, alphas) -> bool:
    return bool(targets.accept(np.asarray(s, dtype=float)[None, :], alphas)[0])


def discrepancy(targets: TargetSet, s, alphas) -> float:
    return float(targets.discrepancy(np.asarray(s, dtype=float)[None, :], alphas)[0])


def min_p_value(targets: TargetSet, s) -> float:
    return float(targets.min_p_value(np.asarray(s, dtype=float)[None, :])[0])


_FIELD_TYPES = {f.name: f.type for f in fields(TargetSpec)}


def load_targets(path) -> TargetSet:
    """Read a target CSV whose columns are TargetSpec field names."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for key, raw in row.items():
                if key not in _FIELD_TYPES:
                    raise TargetConfigError(f"unknown target column {key!r}")
                raw = (raw or "").strip()
                if raw == "":
                    continue
                if key in ("id", "interval_form"):
                    kw[key] = raw
                elif key in ("sim_sample_size", "cost_rank"):
                    kw[key] = int(float(raw))
                else:
                    kw[key] = float(raw)
            out.append(TargetSpec(**kw))
    return TargetSet(out)


def write_targets(targets: TargetSet, path) -> None:
    names = [f.name for f in fields(TargetSpec)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for t in targets:
            row = []
            for n in names:
                v = getattr(t, n)
                if isinstance(v, float):
                    row.append("" if v != v else repr(v))
                else:
                    row.append(str(v))
            w.writerow(row)
