"""Models with known posteriors, used to check the engine end to end."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .distributions import PriorSet, PriorSpec
from .targets import TargetSet, TargetSpec


def conjugate_simulate(theta: float, m: int, rng: np.random.Generator, sigma: float = 1.0) -> float:
    """Mean of m draws from N(theta, sigma).

    The mean is drawn directly from its exact N(theta, sigma^2/m) law.
    """
    if sigma == 0:
        return float(theta)
    return float(theta + sigma / math.sqrt(m) * rng.standard_normal())


def bimodal_simulate(theta: float, m: int, rng: np.random.Generator, sigma: float = 1.0) -> float:
    """Mean of m draws from N(|theta|, sigma)."""
    return conjugate_simulate(abs(theta), m, rng, sigma)


class ConjugateNormalModel:
    """One normal mean observed through several noisy targets.

    Target j reports the mean of ``m_j`` draws from N(theta, sigma_j), so its
    effective standard error is sigma_j / sqrt(m_j). With a normal prior the
    posterior is normal in closed form. The prior is stored as a truncated
    normal with bounds far enough out (+-10 sd) to make truncation negligible.
    """

    def __init__(self, mu0: float, sigma0: float, observed: Sequence[float],
                 sigmas: Sequence[float], m: Sequence[int], alpha_final: float = 0.7,
                 alpha_init: float = 0.0, name: str = "theta"):
        self.mu0, self.sigma0 = float(mu0), float(sigma0)
        self.observed = np.asarray(observed, dtype=float)
        self.sigmas = np.asarray(sigmas, dtype=float)
        self.m = np.asarray(m, dtype=int)
        if not (self.observed.shape == self.sigmas.shape == self.m.shape):
            raise ValueError("observed, sigmas and m must have the same length")
        self.alpha_final, self.alpha_init = alpha_final, alpha_init
        self.priors = PriorSet([PriorSpec(name, "truncated_normal", mu0 - 10 * sigma0,
                                          mu0 + 10 * sigma0, mu0, sigma0)])
        self.ids = [f"y{j + 1}" for j in range(self.observed.size)]
        self._lookup = {tid: j for j, tid in enumerate(self.ids)}

    @property
    def effective_se(self) -> np.ndarray:
        return self.sigmas / np.sqrt(self.m)

    def targets(self) -> TargetSet:
        se = self.effective_se
        return TargetSet([TargetSpec(tid, float(o), se=float(s), alpha_init=self.alpha_init,
                                     alpha_final=self.alpha_final, sim_sample_size=int(m),
                                     cost_rank=j + 1)
                          for j, (tid, o, s, m) in enumerate(zip(self.ids, self.observed, se, self.m))])

    def simulate_targets(self, theta, target_ids: Sequence[str], rng: np.random.Generator) -> np.ndarray:
        th = float(np.asarray(theta).ravel()[0])
        out = np.empty(len(target_ids))
        for k, tid in enumerate(target_ids):
            j = self._lookup[tid]
            out[k] = conjugate_simulate(th, int(self.m[j]), rng, float(self.sigmas[j]))
        return out

    def posterior(self) -> tuple[float, float]:
        return conjugate_posterior(self.mu0, self.sigma0, self.observed, self.effective_se)


def conjugate_posterior(mu0: float, sigma0: float, observed=(), se=()) -> tuple[float, float]:
    """Normal prior times independent normal likelihoods: posterior (mean, sd)."""
    observed = np.asarray(observed, dtype=float)
    se = np.asarray(se, dtype=float)
    prec = 1.0 / sigma0 ** 2 + np.sum(1.0 / se ** 2)
    mean = (mu0 / sigma0 ** 2 + np.sum(observed / se ** 2)) / prec
    return float(mean), float(1.0 / math.sqrt(prec))


class SymmetricBimodalModel:
    """Observed |theta| under a prior symmetric about zero: two posterior modes."""

    def __init__(self, observed: float = 2.0, sigma: float = 5.0, m: int = 100,
                 bound: float = 4.0, alpha_final: float = 0.3, alpha_init: float = 0.0,
                 name: str = "theta"):
        self.observed, self.sigma, self.m = float(observed), float(sigma), int(m)
        self.alpha_final, self.alpha_init = alpha_final, alpha_init
        self.priors = PriorSet([PriorSpec(name, "uniform", -bound, bound)])

    @property
    def effective_se(self) -> float:
        return self.sigma / math.sqrt(self.m)

    def targets(self) -> TargetSet:
        return TargetSet([TargetSpec("abs_theta", self.observed, se=self.effective_se,
                                     alpha_init=self.alpha_init, alpha_final=self.alpha_final,
                                     sim_sample_size=self.m)])

    def simulate_targets(self, theta, target_ids: Sequence[str], rng: np.random.Generator) -> np.ndarray:
        th = float(np.asarray(theta).ravel()[0])
        return np.array([bimodal_simulate(th, self.m, rng, self.sigma) for _ in target_ids])


def default_conjugate() -> ConjugateNormalModel:
    """Three-target design used by the acceptance suite."""
    return ConjugateNormalModel(mu0=2.0, sigma0=1.0, observed=[3.1, 2.7, 3.4],
                                sigmas=[8.0, 10.0, 12.0], m=[100, 100, 100])
