"""Calibrated and fixed parameters of the colorectal cancer natural-history model."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

# growth curve and fixed distribution constants (not calibrated)
D_INF = 50.0
D_0 = 1.0
SHAPE_P = 3.0
LOGNORMAL_SD = 0.5
WEIBULL_SHAPE = 5.0

MALE, FEMALE = 0, 1
SEXES = {"male": MALE, "female": FEMALE}

# adenoma sites, distal to proximal; index 0 is the rectum
SITES = ("rectum", "sigmoid", "descending", "transverse", "ascending", "cecum")
SITE_PROBS = np.array([0.09, 0.24, 0.12, 0.24, 0.23, 0.08])
RECTUM = 0


@dataclass(frozen=True)
class GrowthConstants:
    d_inf: float = D_INF
    d_0: float = D_0
    shape_p: float = SHAPE_P
    lognormal_sd: float = LOGNORMAL_SD
    weibull_shape: float = WEIBULL_SHAPE


@dataclass(frozen=True)
class NaturalHistoryParams:
    # adenoma risk
    A: float
    sigma_alpha: float
    alpha1: float
    alpha20: float
    alpha50: float
    alpha60: float
    alpha70: float
    # Frechet time to 10 mm
    beta1_colon: float
    beta1_rectum: float
    beta2_colon: float
    beta2_rectum: float
    # lognormal size at transition
    gamma0: float
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    gamma5: float
    gamma6: float
    gamma7: float
    # Weibull sojourn scale
    tau_colon: float
    tau_rectum: float

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_vector(cls, theta, names=None) -> "NaturalHistoryParams":
        theta = np.asarray(theta, dtype=float).ravel()
        if names is None:
            return cls(*map(float, theta))
        lookup = dict(zip(names, theta))
        return cls(**{n: float(lookup[n]) for n in cls.names()})

    def as_vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def risk_slopes(self) -> np.ndarray:
        return np.array([self.alpha20, self.alpha50, self.alpha60, self.alpha70])


# Posterior means reported for the calibrated model; used as a reference
# parameter point for plausibility checks.
REFERENCE_POSTERIOR_MEANS = NaturalHistoryParams(
    A=-6.36, sigma_alpha=1.28, alpha1=-0.61, alpha20=0.041, alpha50=0.028,
    alpha60=0.013, alpha70=0.008,
    beta1_colon=1.32, beta1_rectum=3.30, beta2_colon=38.1, beta2_rectum=16.4,
    gamma0=3.23, gamma1=-0.17, gamma2=-0.07, gamma3=0.12, gamma4=-0.009,
    gamma5=0.001, gamma6=0.0, gamma7=0.0,
    tau_colon=1.91, tau_rectum=2.32,
)
