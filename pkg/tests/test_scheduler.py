import numpy as np
import pytest
from conftest import LinearModel, linear_targets, uniform_priors

from imabc.scheduler import Evaluator, engine_rng, eval_rng, evaluate_point


def test_streams_are_distinct_and_reproducible():
    a = eval_rng(5, 10, 0, 1).random(4)
    assert np.array_equal(a, eval_rng(5, 10, 0, 1).random(4))
    for other in (eval_rng(5, 11, 0, 1), eval_rng(5, 10, 1, 1), eval_rng(5, 10, 0, 2),
                  eval_rng(6, 10, 0, 1), engine_rng(5, 10)):
        assert not np.array_equal(a, other.random(4))


class NoisyModel(LinearModel):
    pass


def test_point_result_independent_of_batch_and_workers():
    priors = uniform_priors(2)
    model = NoisyModel(priors, noise=0.05)
    targets = linear_targets([0.5, 0.5, 0.5], se=0.2, alpha_init=0.01, ranks=[1, 2, 2])
    theta = np.random.default_rng(0).random((60, 2))
    jobs = [(100 + i, 0, th) for i, th in enumerate(theta)]
    alphas = targets.alpha_init
    with Evaluator(model, targets, 42, workers=1) as ev:
        serial = ev(jobs, alphas)
    with Evaluator(model, targets, 42, workers=4) as ev:
        pooled = ev(jobs, alphas)
        reversed_batch = ev(jobs[::-1], alphas)[::-1]
    for a, b, c in zip(serial, pooled, reversed_batch):
        assert np.array_equal(a.sim, b.sim, equal_nan=True)
        assert np.array_equal(a.sim, c.sim, equal_nan=True)
        assert a.accepted == b.accepted == c.accepted and a.ranks == b.ranks
    single = evaluate_point(model, targets, theta[7], alphas, 42, 107, 0)
    assert np.array_equal(single.sim, serial[7].sim, equal_nan=True)


def test_evaluator_rejects_bad_settings():
    priors = uniform_priors(1)
    with pytest.raises(ValueError):
        Evaluator(LinearModel(priors), linear_targets([0.5]), 1, workers=0)


class WrongShape(LinearModel):
    def simulate_targets(self, theta, target_ids, rng):
        return np.zeros(len(target_ids) + 1)


def test_wrong_output_shape_is_a_point_failure():
    priors = uniform_priors(1)
    ev = evaluate_point(WrongShape(priors), linear_targets([0.5]), [0.5], [0.0], 1, 0, 0)
    assert not ev.accepted and "shape" in ev.error
