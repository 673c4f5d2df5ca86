"""Per-person natural history: adenoma onset, growth, transition and sojourn.

These functions simulate one person at a time and are the readable reference
for the vectorized cohort kernels in :mod:`imabc.crcspin.kernels`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..distributions import Frechet, LognormalSize, WeibullSojourn
from .params import (D_0, D_INF, FEMALE, LOGNORMAL_SD, RECTUM, SHAPE_P, SITE_PROBS,
                     NaturalHistoryParams)

RISK_START = 20.0
KNOTS = np.array([20.0, 50.0, 60.0, 70.0, math.inf])

_C0 = (D_0 / D_INF) ** (1.0 / SHAPE_P)
_G10 = -math.log(((10.0 / D_INF) ** (1.0 / SHAPE_P) - 1.0) / (_C0 - 1.0))


class OutOfDomainError(ValueError):
    pass


@dataclass
class Adenoma:
    onset_age: float
    site: int
    t10: float
    growth_rate: float
    transition_size: float
    transition_age: float | None = None
    clinical_age: float | None = None

    @property
    def rectal(self) -> bool:
        return self.site == RECTUM


@dataclass
class PersonHistory:
    sex: int
    birth_year: int
    alpha0: float
    death_age_other_causes: float
    adenomas: list[Adenoma] = field(default_factory=list)

    @property
    def female(self) -> bool:
        return self.sex == FEMALE

    def first_clinical(self) -> Adenoma | None:
        hits = [a for a in self.adenomas if a.clinical_age is not None]
        return min(hits, key=lambda a: a.clinical_age) if hits else None


# ---------------------------------------------------------------------------
# adenoma risk
# ---------------------------------------------------------------------------

def log_adenoma_risk(params: NaturalHistoryParams, sex: int, alpha0: float, age: float) -> float:
    if age < RISK_START:
        raise OutOfDomainError("adenoma risk is zero before age 20")
    female = 1.0 if sex == FEMALE else 0.0
    out = alpha0 + params.alpha1 * female + min(age - 20.0, 30.0) * params.alpha20
    if age >= 50:
        out += min(age - 50.0, 10.0) * params.alpha50
    if age >= 60:
        out += min(age - 60.0, 10.0) * params.alpha60
    if age >= 70:
        out += (age - 70.0) * params.alpha70
    return out


def _segment_integral(c, b, length):
    # integral of exp(c + b*s) for s in [0, length]
    if b == 0.0:
        return length * math.exp(c)
    return math.exp(c) * math.expm1(b * length) / b


def cumulative_intensity(params: NaturalHistoryParams, sex: int, alpha0: float,
                         a1: float, a2: float) -> float:
    """Integral of the adenoma intensity over ages [a1, a2]."""
    if not RISK_START <= a1 <= a2:
        raise OutOfDomainError("need 20 <= a1 <= a2")
    slopes = params.risk_slopes()
    total = 0.0
    for k in range(4):
        lo, hi = max(a1, KNOTS[k]), min(a2, KNOTS[k + 1])
        if hi > lo:
            c = log_adenoma_risk(params, sex, alpha0, lo)
            total += _segment_integral(c, slopes[k], hi - lo)
    return total


def inverse_cumulative_intensity(params: NaturalHistoryParams, sex: int, alpha0: float,
                                 y: float) -> float:
    """Age a with cumulative intensity from 20 to a equal to y (inf if never)."""
    slopes = params.risk_slopes()
    age = RISK_START
    for k in range(4):
        b = slopes[k]
        c = log_adenoma_risk(params, sex, alpha0, KNOTS[k])
        length = KNOTS[k + 1] - KNOTS[k]
        mass = _segment_integral(c, b, length) if math.isfinite(length) else math.inf
        if b < 0 and not math.isfinite(length):
            mass = -math.exp(c) / b
        if y <= mass:
            if b == 0.0:
                return KNOTS[k] + y * math.exp(-c)
            arg = y * b * math.exp(-c)
            if arg <= -1.0:
                return math.inf
            return KNOTS[k] + math.log1p(arg) / b
        y -= mass
        age = KNOTS[k + 1]
    return math.inf if age == math.inf else age


def sample_adenoma_initiations(params: NaturalHistoryParams, person: PersonHistory,
                               rng: np.random.Generator) -> list[float]:
    """Onset ages on [20, death) via unit-rate exponential gaps in transformed time."""
    death = person.death_age_other_causes
    onsets: list[float] = []
    if death <= RISK_START:
        return onsets
    y = 0.0
    while True:
        y += rng.exponential()
        age = inverse_cumulative_intensity(params, person.sex, person.alpha0, y)
        if age >= death:
            return onsets
        onsets.append(age)


def sample_location(rng: np.random.Generator) -> int:
    return int(np.searchsorted(np.cumsum(SITE_PROBS), rng.random(), side="right").clip(0, 5))


# ---------------------------------------------------------------------------
# growth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdenomaGrowth:
    """Generalized von Bertalanffy curve parameterized by the time to 10 mm."""

    t10: float

    def __post_init__(self):
        if not self.t10 > 0:
            raise ValueError("time to 10 mm must be positive")

    @property
    def lam(self) -> float:
        return _G10 / self.t10

    def diameter_at(self, t):
        t = np.asarray(t, dtype=float)
        inner = 1.0 + (_C0 - 1.0) * np.exp(-self.lam * t)
        return (D_INF * inner ** SHAPE_P)[()]

    def time_to_size(self, size: float) -> float:
        return self.t10 * growth_time_ratio(size)


def growth_time_ratio(size):
    """Time to reach ``size`` divided by the time to reach 10 mm."""
    size = np.asarray(size, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = -np.log(((size / D_INF) ** (1.0 / SHAPE_P) - 1.0) / (_C0 - 1.0)) / _G10
    g = np.where(size <= D_0, 0.0, g)
    return np.where(size >= D_INF, np.inf, g)[()]


def adenoma_growth(t10: float) -> AdenomaGrowth:
    return AdenomaGrowth(t10)


# ---------------------------------------------------------------------------
# transition and sojourn
# ---------------------------------------------------------------------------

def transition_mean(params: NaturalHistoryParams, sex: int, site: int, onset_age: float) -> float:
    f = 1.0 if sex == FEMALE else 0.0
    r = 1.0 if site == RECTUM else 0.0
    return (params.gamma0 + params.gamma1 * f + params.gamma2 * r + params.gamma3 * f * r
            + (params.gamma4 + params.gamma5 * f + params.gamma6 * r + params.gamma7 * f * r)
            * onset_age)


def transition_size(params: NaturalHistoryParams, sex: int, site: int, onset_age: float,
                    rng: np.random.Generator) -> float:
    if onset_age < RISK_START:
        raise OutOfDomainError("adenomas start at age 20 or later")
    mu = transition_mean(params, sex, site, onset_age)
    return float(LognormalSize(mu, LOGNORMAL_SD).sample(rng))


def sojourn(params: NaturalHistoryParams, site: int) -> WeibullSojourn:
    return WeibullSojourn(params.tau_rectum if site == RECTUM else params.tau_colon)


def time_to_10mm(params: NaturalHistoryParams, site: int) -> Frechet:
    if site == RECTUM:
        return Frechet(params.beta1_rectum, params.beta2_rectum)
    return Frechet(params.beta1_colon, params.beta2_colon)


# ---------------------------------------------------------------------------
# colonoscopy
# ---------------------------------------------------------------------------

ADENOMA, PRECLINICAL_CANCER = "adenoma", "preclinical_cancer"


def colonoscopy_sensitivity(size, lesion: str = ADENOMA):
    size = np.asarray(size, dtype=float)
    if np.any(size < 1):
        raise ValueError("lesion size must be at least 1 mm")
    miss = np.where(size <= 15, 0.34 - 0.0349 * size + 0.0009 * size * size,
                    np.where(size <= 30, 0.01, np.where(size <= 40, 0.005, 0.001)))
    sens = 1.0 - miss
    if lesion == PRECLINICAL_CANCER:
        sens = np.maximum(0.95, sens)
    elif lesion != ADENOMA:
        raise ValueError(f"unknown lesion type {lesion!r}")
    return sens[()]


# ---------------------------------------------------------------------------
# one person
# ---------------------------------------------------------------------------

def simulate_person(params: NaturalHistoryParams, sex: int, birth_year: int, life_table,
                    rng: np.random.Generator) -> PersonHistory:
    alpha0 = params.A + params.sigma_alpha * rng.standard_normal()
    death = float(life_table.sample_death_age(np.array([sex]), np.array([birth_year]),
                                              np.array([0.0]), rng)[0])
    person = PersonHistory(sex, birth_year, alpha0, death)
    for onset in sample_adenoma_initiations(params, person, rng):
        site = sample_location(rng)
        t10 = float(time_to_10mm(params, site).sample(rng))
        growth = AdenomaGrowth(t10)
        size = transition_size(params, sex, site, onset, rng)
        ad = Adenoma(onset, site, t10, growth.lam, size)
        t_trans = onset + growth.time_to_size(size)
        if t_trans < death:
            ad.transition_age = t_trans
            t_clin = t_trans + float(sojourn(params, site).sample(rng))
            if t_clin < death:
                ad.clinical_age = t_clin
        person.adenomas.append(ad)
    return person
