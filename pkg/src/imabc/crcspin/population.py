"""Other-cause mortality and study population specifications."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .params import SEXES


class PopulationConfigError(ValueError):
    pass


def data_path(*parts) -> Path:
    return Path(str(resources.files("imabc.crcspin").joinpath("data", *parts)))


def _rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.DictReader(lines))


class LifeTable:
    """Annual death probabilities by sex, birth cohort and single year of age.

    Within a year of age the hazard is constant. The oldest age listed is
    treated as closing the table (everyone dies within that year).
    """

    def __init__(self, rows):
        tables: dict[tuple[int, int], dict[int, float]] = {}
        for sex, cohort, age, q in rows:
            tables.setdefault((int(sex), int(cohort)), {})[int(age)] = float(q)
        if not tables:
            raise PopulationConfigError("empty life table")
        self._cum = {}
        for key, by_age in tables.items():
            ages = np.arange(max(by_age) + 1)
            missing = set(ages.tolist()) - set(by_age)
            if missing:
                raise PopulationConfigError(f"life table {key} missing ages {sorted(missing)[:5]}")
            q = np.array([by_age[a] for a in ages])
            if np.any((q < 0) | (q > 1)):
                raise PopulationConfigError("death probabilities must lie in [0, 1]")
            q[-1] = 1.0
            with np.errstate(divide="ignore"):
                hazard = -np.log1p(-q)
            self._cum[key] = (np.concatenate([[0.0], np.cumsum(hazard)]), hazard)
        self.cohorts = {s: sorted(c for (sx, c) in self._cum if sx == s) for s in (0, 1)}
        for s in (0, 1):
            if not self.cohorts[s]:
                raise PopulationConfigError("life table must cover both sexes")

    @classmethod
    def from_csv(cls, path) -> "LifeTable":
        rows = []
        for r in _rows(path):
            sex = r["sex"].strip().lower()
            sex = SEXES[sex] if sex in SEXES else int(sex)
            rows.append((sex, int(r["birth_cohort"]), int(r["age"]), float(r["death_probability"])))
        return cls(rows)

    @classmethod
    def default(cls) -> "LifeTable":
        return cls.from_csv(data_path("life_table.csv"))

    def sample_death_age(self, sex, birth_year, alive_at, rng: np.random.Generator) -> np.ndarray:
        """Other-cause death ages conditional on being alive at ``alive_at``."""
        sex = np.asarray(sex, dtype=int)
        birth_year = np.asarray(birth_year, dtype=int)
        alive_at = np.asarray(alive_at, dtype=float)
        e = rng.exponential(size=sex.shape[0])
        out = np.empty(sex.shape[0])
        keys = np.zeros(sex.shape[0], dtype=int)
        for s in (0, 1):
            options = np.array(self.cohorts[s])
            idx = np.clip(np.searchsorted(options, birth_year, side="right") - 1, 0, None)
            keys = np.where(sex == s, options[idx], keys)
        for s in (0, 1):
            for c in self.cohorts[s]:
                sel = (sex == s) & (keys == c)
                if not sel.any():
                    continue
                cum, hazard = self._cum[(s, c)]
                out[sel] = _invert_cum_hazard(cum, hazard, alive_at[sel], e[sel])
        return out


def _cum_hazard_at(cum, hazard, x):
    i = np.clip(np.floor(x).astype(int), 0, hazard.size - 1)
    frac = np.clip(x - i, 0.0, 1.0)
    with np.errstate(invalid="ignore"):
        part = np.where(frac > 0, hazard[i] * frac, 0.0)
    return cum[i] + part


def _invert_cum_hazard(cum, hazard, start, e):
    target = _cum_hazard_at(cum, hazard, start) + e
    i = np.searchsorted(cum, target, side="right") - 1
    i = np.clip(i, 0, hazard.size - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(np.isinf(hazard[i]), 0.0, (target - cum[i]) / hazard[i])
    age = i + np.clip(frac, 0.0, 1.0)
    return np.maximum(age, start)


@dataclass
class StudyPopulationSpec:
    """Age/sex joint distribution of a study population plus exam protocol.

    ``strata`` rows are (sex, age_lower, age_upper, weight); ages are uniform
    within a row.
    """

    study: str
    calendar_year: int
    strata: list[tuple[int, float, float, float]]
    screening_naive: bool = True
    detection: str = "colonoscopy"
    notes: str = ""
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.detection not in ("colonoscopy", "none"):
            raise PopulationConfigError(f"{self.study}: unknown detection {self.detection!r}")
        if not self.strata:
            raise PopulationConfigError(f"{self.study}: no strata")
        w = np.array([s[3] for s in self.strata], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise PopulationConfigError(f"{self.study}: weights must be nonnegative")
        self.weights = w / w.sum()
        for sex, lo, hi, _ in self.strata:
            if sex not in (0, 1) or not (20 <= lo < hi):
                raise PopulationConfigError(f"{self.study}: bad stratum {(sex, lo, hi)}")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyPopulationSpec":
        strata = []
        for row in d["strata"]:
            sex = row["sex"]
            sex = SEXES[sex] if isinstance(sex, str) else int(sex)
            strata.append((sex, float(row["age_lower"]), float(row["age_upper"]), float(row["weight"])))
        return cls(study=d["study"], calendar_year=int(d["calendar_year"]), strata=strata,
                   screening_naive=bool(d.get("screening_naive", True)),
                   detection=d.get("detection", "colonoscopy"), notes=d.get("notes", ""))

    @classmethod
    def from_json(cls, path) -> "StudyPopulationSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        inv = {v: k for k, v in SEXES.items()}
        return {"study": self.study, "calendar_year": self.calendar_year,
                "screening_naive": self.screening_naive, "detection": self.detection,
                "notes": self.notes,
                "strata": [{"sex": inv[s], "age_lower": lo, "age_upper": hi, "weight": w}
                           for s, lo, hi, w in self.strata]}

    def sample(self, n: int, rng: np.random.Generator, rows=None):
        """Draw (sex, age) for n persons, optionally restricted to some rows."""
        w = self.weights if rows is None else _restrict(self.weights, rows)
        k = rng.choice(len(self.strata), size=n, p=w)
        tab = np.array([s[:3] for s in self.strata], dtype=float)
        sex = tab[k, 0].astype(int)
        age = tab[k, 1] + rng.random(n) * (tab[k, 2] - tab[k, 1])
        return sex, age


def _restrict(weights, rows):
    w = np.zeros_like(weights)
    w[rows] = weights[rows]
    if w.sum() <= 0:
        raise PopulationConfigError("selected strata carry no weight")
    return w / w.sum()


STUDIES = ("pickhardt", "corley", "imperiale", "church", "lieberman", "seer")


def default_populations() -> dict[str, StudyPopulationSpec]:
    return {s: StudyPopulationSpec.from_json(data_path("populations", f"{s}.json")) for s in STUDIES}


def load_populations(paths: dict[str, str] | None) -> dict[str, StudyPopulationSpec]:
    pops = default_populations()
    for study, path in (paths or {}).items():
        pops[study] = StudyPopulationSpec.from_json(path)
    return pops
