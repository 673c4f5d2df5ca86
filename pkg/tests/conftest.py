import numpy as np
import pytest

from imabc.distributions import PriorSet, PriorSpec
from imabc.engine import ACCEPTED, EngineConfig, EngineState, _append, _empty_state
from imabc.targets import TargetSet, TargetSpec


def uniform_priors(p, lo=0.0, hi=1.0):
    return PriorSet([PriorSpec(f"x{j}", "uniform", lo, hi) for j in range(p)])


class LinearModel:
    """Target j reports theta[j % p] plus optional noise; records calls per target."""

    def __init__(self, priors, noise=0.0, fail_above=None):
        self.priors = priors
        self.noise = noise
        self.fail_above = fail_above
        self.calls: dict[str, int] = {}

    def simulate_targets(self, theta, target_ids, rng):
        theta = np.asarray(theta, dtype=float)
        if self.fail_above is not None and theta[0] > self.fail_above:
            raise RuntimeError("simulated model failure")
        out = []
        for tid in target_ids:
            self.calls[tid] = self.calls.get(tid, 0) + 1
            j = int(tid[1:])
            out.append(theta[j % theta.size] + self.noise * rng.standard_normal())
        return np.array(out)


def linear_targets(observed, se=0.1, alpha_final=0.05, alpha_init=0.0, ranks=None):
    ranks = ranks or [1] * len(observed)
    return TargetSet([TargetSpec(f"t{j}", float(o), se=se, alpha_init=alpha_init,
                                 alpha_final=alpha_final, cost_rank=r)
                      for j, (o, r) in enumerate(zip(observed, ranks))])


def make_state(theta, sim, targets, priors, status=None, alphas=None, **cfg):
    """A state holding the given points, evaluated as if by the initial draw."""
    cfg.setdefault("n_init", max(len(theta), 1))
    config = EngineConfig(seed=0, **cfg)
    state = _empty_state(config, priors, targets)
    idx = _append(state, np.asarray(theta, dtype=float), 0, np.full(len(theta), -1))
    state.sim[idx] = np.asarray(sim, dtype=float)
    state.pvals[idx] = targets.p_values(state.sim[idx])
    state.status[idx] = ACCEPTED if status is None else np.asarray(status)
    if alphas is not None:
        state.alphas = np.asarray(alphas, dtype=float)
    state.n_total = config.n_init
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["ACCEPTANCE_LINES", "EngineState", "LinearModel", "linear_targets", "make_state",
           "uniform_priors"]


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
