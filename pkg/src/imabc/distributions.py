"""Sampling and density primitives used by the engine and the models.

Priors are univariate truncated normals or uniforms, optionally coupled by a
bound rule that is applied as a validity predicate on the joint vector.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ndtr, ndtri

SQRT_2PI = math.sqrt(2.0 * math.pi)
LOG_2PI = math.log(2.0 * math.pi)


class InvalidPriorError(ValueError):
    pass


class UndefinedMomentError(ValueError):
    pass


class DegenerateKernelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bound rules
# ---------------------------------------------------------------------------

# Probability that an adenoma reaches 10 mm within 10 years is kept in
# [0.0001, 0.25]; with a Frechet(shape, scale) time-to-10mm this bounds scale.
P10_LOW, P10_HIGH = 0.0001, 0.25


def frechet_scale_bounds(shape):
    shape = np.asarray(shape, dtype=float)
    lo = 10.0 * (-math.log(P10_HIGH)) ** (1.0 / shape)
    hi = 10.0 * (-math.log(P10_LOW)) ** (1.0 / shape)
    return lo, hi


def _frechet_10mm(shape, scale):
    lo, hi = frechet_scale_bounds(shape)
    return (scale >= lo) & (scale <= hi)


BOUND_RULES: dict[str, Callable] = {"frechet_10mm": _frechet_10mm}


def parse_bound_rule(rule: str) -> tuple[str, str]:
    """Split ``"rule_name:other_param"`` into its two parts."""
    name, _, other = rule.partition(":")
    if name not in BOUND_RULES or not other:
        raise InvalidPriorError(f"unknown bound rule {rule!r}")
    return name, other


# ---------------------------------------------------------------------------
# univariate priors
# ---------------------------------------------------------------------------

def _tn_ppf(u, a, b):
    # inverse cdf of a standard normal truncated to [a, b]; reflect when the
    # whole support sits in the upper tail so ndtr keeps its precision
    if a > 0:
        return -_tn_ppf(1.0 - np.asarray(u), -b, -a)
    fa, fb = ndtr(a), ndtr(b)
    x = ndtri(fa + np.asarray(u) * (fb - fa))
    return np.clip(x, a, b)


@dataclass(frozen=True)
class PriorSpec:
    name: str
    kind: str
    lower: float
    upper: float
    mu: float = float("nan")
    sigma: float = float("nan")
    bound_rule: str | None = None

    def __post_init__(self):
        if self.kind not in ("truncated_normal", "uniform"):
            raise InvalidPriorError(f"{self.name}: unknown prior kind {self.kind!r}")
        if not self.upper > self.lower:
            raise InvalidPriorError(f"{self.name}: upper must exceed lower")
        if self.kind == "truncated_normal" and not self.sigma > 0:
            raise InvalidPriorError(f"{self.name}: sigma must be positive")
        if self.bound_rule:
            parse_bound_rule(self.bound_rule)

    @property
    def _ab(self):
        return (self.lower - self.mu) / self.sigma, (self.upper - self.mu) / self.sigma

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.lower + u * (self.upper - self.lower)
        a, b = self._ab
        x = self.mu + self.sigma * _tn_ppf(u, a, b)
        return np.clip(x, self.lower, self.upper)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        if self.kind == "uniform":
            return (x - self.lower) / (self.upper - self.lower)
        a, b = self._ab
        fa, fb = ndtr(a), ndtr(b)
        return (ndtr((x - self.mu) / self.sigma) - fa) / (fb - fa)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        if self.kind == "uniform":
            return np.where(inside, 1.0 / (self.upper - self.lower), 0.0)
        a, b = self._ab
        z = (x - self.mu) / self.sigma
        mass = ndtr(b) - ndtr(a)
        dens = np.exp(-0.5 * z * z) / (SQRT_2PI * self.sigma * mass)
        return np.where(inside, dens, 0.0)

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.lower + self.upper)
        a, b = self._ab
        pa, pb = math.exp(-0.5 * a * a) / SQRT_2PI, math.exp(-0.5 * b * b) / SQRT_2PI
        mass = ndtr(b) - ndtr(a)
        return self.mu + self.sigma * (pa - pb) / mass

    def sd(self) -> float:
        if self.kind == "uniform":
            return (self.upper - self.lower) / math.sqrt(12.0)
        a, b = self._ab
        pa, pb = math.exp(-0.5 * a * a) / SQRT_2PI, math.exp(-0.5 * b * b) / SQRT_2PI
        mass = ndtr(b) - ndtr(a)
        r = (pa - pb) / mass
        var = 1.0 + (a * pa - b * pb) / mass - r * r
        return self.sigma * math.sqrt(max(var, 0.0))


def prior_sample(spec: PriorSpec, rng: np.random.Generator, size=None):
    """Draw from ``spec`` by inversion; always inside ``[lower, upper]``."""
    return spec.ppf(rng.random(size))[()]


def prior_density(spec: PriorSpec, x):
    return spec.pdf(x)[()]


class PriorSet:
    """Joint prior: independent marginals times any bound-rule indicators."""

    def __init__(self, specs: Sequence[PriorSpec]):
        self.specs = list(specs)
        self.names = [s.name for s in self.specs]
        if len(set(self.names)) != len(self.names):
            raise InvalidPriorError("duplicate parameter names")
        self._rules = []
        for i, s in enumerate(self.specs):
            if s.bound_rule:
                rule, other = parse_bound_rule(s.bound_rule)
                if other not in self.names:
                    raise InvalidPriorError(f"{s.name}: bound rule refers to unknown {other!r}")
                self._rules.append((BOUND_RULES[rule], self.names.index(other), i))

    def __len__(self):
        return len(self.specs)

    @property
    def dim(self) -> int:
        return len(self.specs)

    def sd(self) -> np.ndarray:
        return np.array([s.sd() for s in self.specs])

    def satisfies_bounds(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        ok = np.ones(theta.shape[0], dtype=bool)
        for rule, i_other, i_self in self._rules:
            ok &= rule(theta[:, i_other], theta[:, i_self])
        return ok

    def marginal_density(self, theta) -> np.ndarray:
        """Product of marginal densities, ignoring bound rules."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        dens = np.ones(theta.shape[0])
        for j, s in enumerate(self.specs):
            dens *= s.pdf(theta[:, j])
        return dens

    def density(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return np.where(self.satisfies_bounds(theta), self.marginal_density(theta), 0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, self.dim))
        return self.transform(u)

    def transform(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        return np.column_stack([s.ppf(u[:, j]) for j, s in enumerate(self.specs)])


def latin_hypercube(priors: Sequence[PriorSpec] | PriorSet, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """n x p Latin hypercube sample pushed through each marginal inverse cdf."""
    if n < 1:
        raise ValueError("n must be at least 1")
    specs = priors.specs if isinstance(priors, PriorSet) else list(priors)
    p = len(specs)
    u = np.empty((n, p))
    for j in range(p):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return np.column_stack([s.ppf(u[:, j]) for j, s in enumerate(specs)])


def load_priors(path) -> PriorSet:
    """Read a prior file (CSV: name,kind,mu,sigma,lower,upper,bound_rule)."""
    specs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def num(key):
                v = (row.get(key) or "").strip()
                return float(v) if v else float("nan")

            specs.append(PriorSpec(
                name=row["name"].strip(),
                kind=row["kind"].strip(),
                mu=num("mu"), sigma=num("sigma"),
                lower=float(row["lower"]), upper=float(row["upper"]),
                bound_rule=(row.get("bound_rule") or "").strip() or None,
            ))
    return PriorSet(specs)


def write_priors(priors: PriorSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "kind", "mu", "sigma", "lower", "upper", "bound_rule"])
        for s in priors.specs:
            fmt = lambda v: "" if v != v else repr(float(v))
            w.writerow([s.name, s.kind, fmt(s.mu), fmt(s.sigma), repr(s.lower),
                        repr(s.upper), s.bound_rule or ""])


# ---------------------------------------------------------------------------
# model distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frechet:
    """Time to reach 10 mm; ``cdf(t) = exp(-(t/scale)^-shape)``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Frechet shape and scale must be positive")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.exp(-(t / self.scale) ** -self.shape)
        return np.where(t > 0, out, 0.0)[()]

    def ppf(self, u):
        return self.scale * (-np.log(u)) ** (-1.0 / self.shape)

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))

    def mean(self) -> float:
        if self.shape <= 1:
            raise UndefinedMomentError("Frechet mean requires shape > 1")
        return self.scale * gamma_fn(1.0 - 1.0 / self.shape)

    def median(self) -> float:
        return self.scale * math.log(2.0) ** (-1.0 / self.shape)


WEIBULL_SHAPE = 5.0


@dataclass(frozen=True)
class WeibullSojourn:
    scale: float
    shape: float = WEIBULL_SHAPE

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("sojourn scale must be positive")

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return (1.0 - np.exp(-(x / self.scale) ** self.shape))[()]

    def ppf(self, u):
        return self.scale * (-np.log1p(-np.asarray(u))) ** (1.0 / self.shape)

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))

    def mean(self) -> float:
        return self.scale * gamma_fn(1.0 + 1.0 / self.shape)

    def sd(self) -> float:
        g1 = gamma_fn(1.0 + 1.0 / self.shape)
        g2 = gamma_fn(1.0 + 2.0 / self.shape)
        return self.scale * math.sqrt(g2 - g1 * g1)


@dataclass(frozen=True)
class LognormalSize:
    mu: float
    sigma: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("lognormal sigma must be positive")

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("size must be positive")
        return ndtr((np.log(s) - self.mu) / self.sigma)[()]

    def sample(self, rng: np.random.Generator, size=None):
        return np.exp(self.mu + self.sigma * rng.standard_normal(size))

    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma ** 2)


# ---------------------------------------------------------------------------
# gaussian kernels
# ---------------------------------------------------------------------------

REGULARIZATION = 1e-10


def regularize(cov) -> np.ndarray:
    """Symmetrize and add eps*I with eps = 1e-10 * trace / p."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    p = cov.shape[0]
    eps = REGULARIZATION * np.trace(cov) / p
    return cov + eps * np.eye(p)


@dataclass
class GaussianKernel:
    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError("covariance shape does not match mean")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(regularize(self.cov))
            except np.linalg.LinAlgError as exc:
                raise DegenerateKernelError("kernel covariance is not positive definite") from exc
        return self._chol

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        L = self.chol
        z = np.linalg.solve(L, (x - self.mean).T)
        half_logdet = np.log(np.diag(L)).sum()
        return -0.5 * (z * z).sum(axis=0) - half_logdet - 0.5 * self.dim * LOG_2PI

    def density(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        z = rng.standard_normal((n, self.dim))
        if not np.any(self.cov):
            out = np.broadcast_to(self.mean, (n, self.dim)).copy()
        else:
            out = self.mean + z @ self.chol.T
        return out[0] if size is None else out


def gaussian_kernel_density(kernel: GaussianKernel, x):
    return kernel.density(x)[()] if np.ndim(x) <= 1 else kernel.density(x)


def gaussian_kernel_sample(kernel: GaussianKernel, rng: np.random.Generator, size=None):
    return kernel.sample(rng, size)
