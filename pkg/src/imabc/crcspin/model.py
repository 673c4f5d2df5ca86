"""Cohort simulation and the calibration-target simulators.

Each study simulates its own population. Persons are generated in chunks;
all random inputs for a chunk are drawn here, in a fixed order, and handed
to the kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..distributions import PriorSet, load_priors
from ..targets import TargetSet, load_targets
from . import kernels
from .params import FEMALE, MALE, RECTUM, SITE_PROBS, NaturalHistoryParams
from .population import (LifeTable, PopulationConfigError, StudyPopulationSpec, data_path,
                         load_populations)

CHUNK = 200_000
SITE_CDF = np.cumsum(SITE_PROBS)

SEX_LABEL = {FEMALE: "female", MALE: "male"}
SEER_AGE_GROUPS = ((20, 50), (50, 60), (60, 70), (70, 85))
CORLEY_BANDS = ((50, 55), (55, 60), (60, 65), (65, 70), (70, 75), (75, 85))
LIEBERMAN_BANDS = ((5.5, 9.5), (9.5, np.inf))
CHURCH_BANDS = ((6.0, 10.0), (10.0, np.inf))

STUDY_ORDER = ("pickhardt", "corley", "imperiale", "church", "lieberman", "seer")
DEFAULT_SAMPLE_SIZES = {"pickhardt": 50_000, "corley": 200_000, "imperiale": 200_000,
                        "church": 300_000, "lieberman": 500_000, "seer": 5_000_000}


def _band_label(lo, hi):
    return f"{lo}_plus" if hi >= 85 and lo >= 75 else f"{lo}_{hi - 1}"


def seer_ids():
    return [f"seer_{loc}_{SEX_LABEL[s]}_{lo}_{hi - 1}"
            for loc in ("colon", "rectum") for s in (FEMALE, MALE) for lo, hi in SEER_AGE_GROUPS]


def corley_ids():
    return [f"corley_{SEX_LABEL[s]}_{_band_label(lo, hi)}" for s in (FEMALE, MALE)
            for lo, hi in CORLEY_BANDS]


STUDY_TARGETS = {
    "seer": seer_ids(),
    "corley": corley_ids(),
    "pickhardt": ["pickhardt_pct_ge10mm"],
    "imperiale": ["imperiale_cancers_per_1000"],
    "lieberman": ["lieberman_6_9mm", "lieberman_ge10mm"],
    "church": ["church_6_10mm", "church_ge10mm"],
}
TARGET_STUDY = {tid: s for s, ids in STUDY_TARGETS.items() for tid in ids}


def study_of(target_id: str) -> str:
    try:
        return TARGET_STUDY[target_id]
    except KeyError:
        raise PopulationConfigError(f"no simulator for target {target_id!r}") from None


# ---------------------------------------------------------------------------
# cohort
# ---------------------------------------------------------------------------

@dataclass
class Cohort:
    sex: np.ndarray
    alpha0: np.ndarray
    owner: np.ndarray
    onset: np.ndarray
    rectal: np.ndarray
    lam: np.ndarray
    tsize: np.ndarray
    trans: np.ndarray
    clin: np.ndarray
    first_clin: np.ndarray
    first_rectal: np.ndarray


def simulate_cohort(params: NaturalHistoryParams, sex, horizon, rng: np.random.Generator,
                    backend=kernels) -> Cohort:
    """Adenoma histories for persons followed from age 20 to ``horizon``."""
    sex = np.asarray(sex, dtype=np.int64)
    horizon = np.asarray(horizon, dtype=float)
    n = sex.shape[0]
    p = params.as_vector()
    slopes = params.risk_slopes()
    alpha0 = params.A + params.sigma_alpha * rng.standard_normal(n)
    c0 = alpha0 + params.alpha1 * (sex == FEMALE)
    total = backend.cum_intensity(c0, slopes, np.maximum(horizon, 20.0))
    counts = rng.poisson(total)
    owner = np.repeat(np.arange(n), counts)
    k = owner.shape[0]
    u_onset = rng.random(k)
    u_site = rng.random(k)
    u_t10 = rng.random(k)
    z_size = rng.standard_normal(k)
    u_soj = rng.random(k)
    onset = backend.invert_intensity(c0[owner], slopes, u_onset * total[owner])
    # guard against rounding past the horizon at the inversion
    onset = np.minimum(onset, horizon[owner])
    site = np.minimum(np.searchsorted(SITE_CDF, u_site, side="right"), len(SITE_PROBS) - 1)
    rectal = site == RECTUM
    female = sex[owner] == FEMALE
    lam, tsize, trans, clin = backend.adenoma_events(female, onset, rectal, u_t10, z_size, u_soj, p)
    first, first_rectal = backend.first_clinical(owner, clin, rectal, n)
    return Cohort(sex, alpha0, owner, onset, rectal, lam, tsize, trans, clin, first, first_rectal)


def _chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield min(size, n - start)


# ---------------------------------------------------------------------------
# registry incidence
# ---------------------------------------------------------------------------

def simulate_seer(params, pop: StudyPopulationSpec, life_table: LifeTable, m: int,
                  rng: np.random.Generator, backend=kernels) -> dict[str, float]:
    """Clinical incidence per 100,000 in the year after the index age.

    Persons are allocated evenly over the eight sex-by-age-group strata; ages
    within a stratum follow the population table.
    """
    out = {}
    per = max(m // (2 * len(SEER_AGE_GROUPS)), 1)
    for s in (FEMALE, MALE):
        for lo, hi in SEER_AGE_GROUPS:
            rows = [i for i, (sx, a, b, _) in enumerate(pop.strata) if sx == s and a >= lo and b <= hi]
            if not rows:
                raise PopulationConfigError(f"seer population has no rows for {SEX_LABEL[s]} {lo}-{hi}")
            at_risk = colon = rectum = 0
            for n in _chunks(per):
                sex, age = pop.sample(n, rng, rows)
                birth = pop.calendar_year - np.floor(age).astype(int)
                death = life_table.sample_death_age(sex, birth, age, rng)
                horizon = np.minimum(death, age + 1.0)
                c = simulate_cohort(params, sex, horizon, rng, backend)
                free = c.first_clin >= age
                case = free & (c.first_clin < horizon)
                at_risk += int(free.sum())
                rectum += int((case & c.first_rectal).sum())
                colon += int((case & ~c.first_rectal).sum())
            label = f"{SEX_LABEL[s]}_{lo}_{hi - 1}"
            out[f"seer_colon_{label}"] = 1e5 * colon / at_risk if at_risk else float("nan")
            out[f"seer_rectum_{label}"] = 1e5 * rectum / at_risk if at_risk else float("nan")
    return out


# ---------------------------------------------------------------------------
# one-time colonoscopy studies
# ---------------------------------------------------------------------------

@dataclass
class ScreenTally:
    """Sufficient counts for every colonoscopy-based target."""

    persons: np.ndarray          # eligible persons by (sex, corley band)
    with_adenoma: np.ndarray     # of those, persons with a detected adenoma
    adenomas: int = 0
    adenomas_ge95: int = 0
    cancers: int = 0
    lesions_in_band: np.ndarray | None = None
    cancers_in_band: np.ndarray | None = None
    eligible: int = 0


def screen_population(params, pop: StudyPopulationSpec, life_table: LifeTable, m: int,
                      rng: np.random.Generator, bands=LIEBERMAN_BANDS, perfect=False,
                      backend=kernels) -> ScreenTally:
    if pop.detection != "colonoscopy":
        raise PopulationConfigError(f"{pop.study}: targets need colonoscopy detection")
    nb = len(CORLEY_BANDS)
    edges = np.array([b[0] for b in CORLEY_BANDS] + [CORLEY_BANDS[-1][1]], dtype=float)
    tally = ScreenTally(np.zeros((2, nb), dtype=np.int64), np.zeros((2, nb), dtype=np.int64),
                        lesions_in_band=np.zeros(len(bands), dtype=np.int64),
                        cancers_in_band=np.zeros(len(bands), dtype=np.int64))
    for n in _chunks(m):
        sex, age = pop.sample(n, rng)
        # other-cause death cannot precede the exam, so only the exam age matters
        c = simulate_cohort(params, sex, age, rng, backend)
        u_det = rng.random(c.owner.shape[0])
        state, size, det = backend.screen_lesions(age[c.owner], c.onset, c.lam, c.trans,
                                                  c.tsize, u_det, perfect)
        free = c.first_clin >= age
        keep = free[c.owner]
        det &= keep
        det_ad = det & (state == kernels.ADENOMA)
        det_ca = det & (state == kernels.CANCER)

        band = np.searchsorted(edges, age, side="right") - 1
        in_range = (band >= 0) & (band < nb) & free
        has_ad = np.zeros(n, dtype=bool)
        has_ad[c.owner[det_ad]] = True
        np.add.at(tally.persons, (sex[in_range], band[in_range]), 1)
        sel = in_range & has_ad
        np.add.at(tally.with_adenoma, (sex[sel], band[sel]), 1)

        tally.eligible += int(free.sum())
        tally.adenomas += int(det_ad.sum())
        tally.adenomas_ge95 += int((det_ad & (size >= 9.5)).sum())
        tally.cancers += int(det_ca.sum())
        for b, (lo, hi) in enumerate(bands):
            inb = (size >= lo) & (size < hi)
            tally.lesions_in_band[b] += int((det & inb).sum())
            tally.cancers_in_band[b] += int((det_ca & inb).sum())
    return tally


def _ratio(num, den, scale):
    return scale * num / den if den else float("nan")


def simulate_study(study: str, params: NaturalHistoryParams, pop: StudyPopulationSpec,
                   life_table: LifeTable, m: int, rng: np.random.Generator,
                   perfect=False, backend=kernels) -> dict[str, float]:
    if study == "seer":
        return simulate_seer(params, pop, life_table, m, rng, backend)
    bands = CHURCH_BANDS if study == "church" else LIEBERMAN_BANDS
    t = screen_population(params, pop, life_table, m, rng, bands, perfect, backend)
    if study == "corley":
        out = {}
        for s in (FEMALE, MALE):
            for b, (lo, hi) in enumerate(CORLEY_BANDS):
                key = f"corley_{SEX_LABEL[s]}_{_band_label(lo, hi)}"
                out[key] = _ratio(t.with_adenoma[s, b], t.persons[s, b], 100.0)
        return out
    if study == "pickhardt":
        return {"pickhardt_pct_ge10mm": _ratio(t.adenomas_ge95, t.adenomas, 100.0)}
    if study == "imperiale":
        return {"imperiale_cancers_per_1000": _ratio(t.cancers, t.eligible, 1000.0)}
    if study in ("lieberman", "church"):
        small, large = STUDY_TARGETS[study]
        return {small: _ratio(t.cancers_in_band[0], t.lesions_in_band[0], 1000.0),
                large: _ratio(t.cancers_in_band[1], t.lesions_in_band[1], 1000.0)}
    raise PopulationConfigError(f"unknown study {study!r}")


def simulate_target_set(params: NaturalHistoryParams, targets: TargetSet,
                        populations: dict[str, StudyPopulationSpec], rng: np.random.Generator,
                        cost_rank_cutoff: int | None = None, life_table: LifeTable | None = None,
                        sample_sizes: dict[str, int] | None = None) -> dict[str, float]:
    """Simulate every target with cost rank up to the cutoff, cheapest first."""
    life_table = life_table or LifeTable.default()
    sizes = dict(DEFAULT_SAMPLE_SIZES)
    sizes.update(sample_sizes_from_targets(targets))
    sizes.update(sample_sizes or {})
    out = {}
    for rank, idx in targets.groups():
        if cost_rank_cutoff is not None and rank > cost_rank_cutoff:
            break
        for study in _studies_for([targets.ids[j] for j in idx]):
            if study not in populations:
                raise PopulationConfigError(f"no population configured for {study!r}")
            out.update(simulate_study(study, params, populations[study], life_table,
                                      sizes[study], rng))
    return {tid: out[tid] for tid in targets.ids if tid in out}


def _studies_for(ids: Sequence[str]) -> list[str]:
    need = {study_of(t) for t in ids}
    return [s for s in STUDY_ORDER if s in need]


def sample_sizes_from_targets(targets: TargetSet) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for t in targets:
        s = study_of(t.id)
        sizes[s] = max(sizes.get(s, 0), t.sim_sample_size)
    return sizes


# ---------------------------------------------------------------------------
# engine-facing model
# ---------------------------------------------------------------------------

def default_priors() -> PriorSet:
    return load_priors(data_path("priors.csv"))


def default_targets() -> TargetSet:
    return load_targets(data_path("targets.csv"))


class CRCSpinModel:
    """Natural-history microsimulation behind the engine's simulation contract."""

    def __init__(self, priors: PriorSet | None = None, targets: TargetSet | None = None,
                 populations: dict[str, StudyPopulationSpec] | None = None,
                 life_table: LifeTable | None = None,
                 sample_sizes: dict[str, int] | None = None, perfect_detection=False):
        self.priors = priors or default_priors()
        self.populations = populations or load_populations(None)
        self.life_table = life_table or LifeTable.default()
        self.sample_sizes = dict(DEFAULT_SAMPLE_SIZES)
        if targets is not None:
            self.sample_sizes.update(sample_sizes_from_targets(targets))
        self.sample_sizes.update(sample_sizes or {})
        self.perfect_detection = perfect_detection
        missing = set(NaturalHistoryParams.names()) - set(self.priors.names)
        if missing:
            raise ValueError(f"priors missing parameters {sorted(missing)}")

    def params(self, theta) -> NaturalHistoryParams:
        return NaturalHistoryParams.from_vector(theta, self.priors.names)

    def simulate_targets(self, theta, target_ids: Sequence[str], rng: np.random.Generator) -> np.ndarray:
        params = self.params(theta)
        values: dict[str, float] = {}
        # one child stream per study, so a study's output does not depend on the others requested
        children = dict(zip(STUDY_ORDER, rng.spawn(len(STUDY_ORDER))))
        for study in _studies_for(target_ids):
            child = children[study]
            if study not in self.populations:
                raise PopulationConfigError(f"no population configured for {study!r}")
            values.update(simulate_study(study, params, self.populations[study], self.life_table,
                                         self.sample_sizes[study], child, self.perfect_detection))
        return np.array([values[t] for t in target_ids], dtype=float)
