import json

import numpy as np
import pytest
from conftest import LinearModel, linear_targets, make_state, uniform_priors
from scipy import stats
from scipy.integrate import quad
from scipy.special import ndtri

from imabc.crcspin.model import default_priors, default_targets
from imabc.distributions import GaussianKernel, PriorSet, PriorSpec, regularize
from imabc.engine import (ACCEPTED, PRUNED, REJECTED, CalibrationResult, CheckpointError,
                          EmptyFrontierError, EmptyPosteriorError, EngineConfig, compute_weights,
                          effective_sample_size, initialize, load_checkpoint, local_covariance,
                          make_result, mixture_density, propose_and_evaluate, resample_posterior,
                          run, save_checkpoint, select_centers, state_from_dict, state_to_dict,
                          update_tolerances)
from imabc.reference import ConjugateNormalModel
from imabc.scheduler import Evaluator


def sim_for_p(p, observed=1.0, se=0.01):
    """Simulated value above ``observed`` whose two-sided p-value is ``p``."""
    return observed + ndtri(1 - np.asarray(p, dtype=float) / 2) * se


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_defaults():
    c = EngineConfig(seed=1)
    assert (c.n_init, c.n_centers, c.batch_per_center, c.n_post) == (21_000, 10, 1_000, 5_000)
    assert c.per_iteration == 10_000 and c.cov_points(21) == 525


@pytest.mark.parametrize("kw", [dict(n_init=0), dict(n_centers=0), dict(batch_per_center=0),
                                dict(n_post=0), dict(max_iterations=-1), dict(n_cov_points=1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EngineConfig(seed=1, **kw)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_initialize_alpha_zero_accepts_everything():
    model = ConjugateNormalModel(0, 1, [0.5], [1.0], [10], alpha_final=0.5)
    state = initialize(EngineConfig(seed=3, n_init=1000), model, model.targets())
    assert state.n_accepted == 1000 and state.n_total == 1000 and state.iteration == 0
    assert state.alphas.tolist() == [0.0]


def test_initialize_incompatible_target_reports():
    priors = uniform_priors(1)
    targets = linear_targets([50.0], se=0.1, alpha_init=0.01)
    state = initialize(EngineConfig(seed=3, n_init=1000), LinearModel(priors), targets)
    assert state.n_accepted == 0 and any("incompatible" in m for m in state.messages)


class CheapModel:
    """Stand-in with the full model's priors; every point fails the first target."""

    def __init__(self):
        self.priors = default_priors()

    def simulate_targets(self, theta, target_ids, rng):
        return np.full(len(target_ids), -1.0)


def test_initialize_full_model_defaults_bookkeeping():
    targets = default_targets()
    state = initialize(EngineConfig(seed=1), CheapModel(), targets)
    assert state.n_total == 21_000 == state.n_points
    # bound-rule violations are rejected before any simulation
    inside = state.config and CheapModel().priors.density(state.theta) > 0
    assert state.group_calls[1] == int(inside.sum()) < 21_000
    assert 2 not in state.group_calls


# ---------------------------------------------------------------------------
# centres and kernels
# ---------------------------------------------------------------------------

def test_select_centers_tie_break_on_distance():
    targets = linear_targets([1.0])
    sims = 1.0 + np.sqrt([2.0, 0.1, 1.0])  # distances 2.0, 0.1, 1.0
    state = make_state(np.zeros((3, 1)), sims[:, None], targets, uniform_priors(1), n_centers=2)
    state.pvals = np.array([[0.9], [0.5], [0.9]])
    assert select_centers(state, targets).tolist() == [2, 0]


def test_select_centers_equal_rho_ascending_distance():
    targets = linear_targets([1.0])
    sims = 1.0 + np.sqrt([0.3, 0.1, 0.2, 0.4])
    state = make_state(np.zeros((4, 1)), sims[:, None], targets, uniform_priors(1), n_centers=4)
    state.pvals = np.full((4, 1), 0.7)
    assert select_centers(state, targets).tolist() == [1, 2, 0, 3]


def test_select_centers_cyclic_reuse_and_empty():
    targets = linear_targets([1.0])
    state = make_state(np.zeros((2, 1)), [[1.0], [1.5]], targets, uniform_priors(1),
                       status=[REJECTED, ACCEPTED], n_centers=3)
    assert select_centers(state, targets).tolist() == [1, 1, 1]
    state.status[:] = REJECTED
    with pytest.raises(EmptyFrontierError):
        select_centers(state, targets)


def test_local_covariance_few_points_is_diagonal_half_prior_sd():
    p = 21
    priors = default_priors()
    rng = np.random.default_rng(0)
    theta = priors.sample(rng, 80)
    targets = linear_targets([1.0])
    state = make_state(theta, np.ones((80, 1)), targets, priors)
    cov = local_covariance(state, 0, priors.sd())
    assert state.n_accepted < 5 * p
    assert np.array_equal(cov, np.diag((priors.sd() / 2) ** 2))


def test_local_covariance_all_points_between_5p_and_25p(rng):
    theta = rng.normal(size=(30, 2))
    state = make_state(theta, np.ones((30, 1)), linear_targets([1.0]), uniform_priors(2))
    assert np.allclose(local_covariance(state, 0, np.ones(2)), np.cov(theta.T), rtol=1e-14)


def test_local_covariance_nearest_25p(rng):
    theta = rng.normal(size=(200, 2))
    sd = np.array([1.0, 2.0])
    state = make_state(theta, np.ones((200, 1)), linear_targets([1.0]), uniform_priors(2))
    z = (theta - theta[7]) / sd
    near = np.argsort((z ** 2).sum(1), kind="stable")[:50]
    assert np.allclose(local_covariance(state, 7, sd), np.cov(theta[near].T), rtol=1e-14)


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

def _two_stage():
    priors = PriorSet([PriorSpec("x0", "uniform", 0.0, 1.0)])
    targets = linear_targets([0.5, 0.5], se=0.05, alpha_final=0.05, alpha_init=0.01, ranks=[1, 2])
    return priors, targets


def test_cost_rank_early_exit():
    priors, targets = _two_stage()
    model = LinearModel(priors)
    state = initialize(EngineConfig(seed=5, n_init=400), model, targets)
    # points failing the rank-1 target never reach rank 2
    lo, hi = targets.intervals(targets.alpha_init)[0]
    inside = ((state.theta[:, 0] >= lo) & (state.theta[:, 0] <= hi)).sum()
    assert model.calls["t0"] == 400 and model.calls["t1"] == inside
    assert state.group_calls == {1: 400, 2: int(inside)}
    assert np.isnan(state.sim[state.status == REJECTED, 1]).all()


def test_out_of_support_draw_never_simulated():
    priors, targets = _two_stage()
    model = LinearModel(priors)
    state = make_state([[0.95]], [[0.5, 0.5]], targets, priors, n_centers=1, batch_per_center=500)
    state.config = EngineConfig(seed=2, n_init=1, n_centers=1, batch_per_center=500)
    propose_and_evaluate(state, model, targets)
    new = state.theta[1:, 0]
    outside = (new < 0) | (new > 1)
    assert outside.any()
    # 1 centre re-simulation plus one call per in-support draw
    assert model.calls["t0"] == 1 + int((~outside).sum())
    assert np.all(state.status[1:][outside] == REJECTED)
    assert state.n_total == 501 and len(state.kernels) == 1


class FlakyCenterModel(LinearModel):
    """The centre re-simulates far from the target on its second evaluation."""

    def simulate_targets(self, theta, target_ids, rng):
        out = super().simulate_targets(theta, target_ids, rng)
        return out + (10.0 if theta[0] == 0.5 and self.calls[target_ids[0]] > 1 else 0.0)


def test_failing_center_is_demoted():
    priors, targets = _two_stage()
    model = FlakyCenterModel(priors)
    state = make_state([[0.5]], [[0.5, 0.5]], targets, priors)
    state.config = EngineConfig(seed=2, n_init=1, n_centers=1, batch_per_center=20)
    model.calls = {"t0": 1, "t1": 1}
    propose_and_evaluate(state, model, targets)
    assert state.status[0] == REJECTED and state.last_round["n_demoted"] == 1
    assert state.n_evals[0] == 1


def test_model_failure_rejects_point_with_diagnostic():
    priors, targets = _two_stage()
    model = LinearModel(priors, fail_above=0.9)
    state = initialize(EngineConfig(seed=5, n_init=100), model, targets)
    bad = state.theta[:, 0] > 0.9
    assert bad.any() and np.all(state.status[bad] == REJECTED)
    assert len(state.failures) == bad.sum()
    assert "simulated model failure" in state.failures[0]["error"]


# ---------------------------------------------------------------------------
# tolerance updates
# ---------------------------------------------------------------------------

def _accepted_state(n, p_values, alpha_final=0.5):
    p_values = np.asarray(p_values, dtype=float).reshape(n, -1)
    J = p_values.shape[1]
    targets = linear_targets([1.0] * J, se=0.01, alpha_final=alpha_final)
    sims = sim_for_p(p_values)
    return make_state(np.zeros((n, 1)), sims, targets, uniform_priors(1)), targets


def test_update_requires_50p_accepted():
    state, targets = _accepted_state(49, np.linspace(0.01, 0.9, 49))
    assert update_tolerances(state, targets) == 0 and state.alphas.tolist() == [0.0]


def test_update_jumps_to_final_when_median_fits():
    state, targets = _accepted_state(60, np.linspace(0.6, 0.99, 60))
    update_tolerances(state, targets)
    assert state.alphas.tolist() == [0.5] and state.n_accepted == 60


def test_update_uses_lower_median_point():
    p = np.linspace(0.01, 0.4, 100)
    state, targets = _accepted_state(100, p)
    pruned = update_tolerances(state, targets)
    # rho sorted descending: position 50 holds the 51st largest p-value
    expected = np.sort(state.pvals[:, 0])[::-1][50]
    assert state.alphas[0] == pytest.approx(expected, rel=1e-12)
    assert pruned == 49


def test_prune_cap_and_rollback():
    # 100 accepted, two targets; the median point has p = (0.4, 0.9)
    rows = [(0.4, 0.9)]
    rows += [(0.45 + 0.001 * k, 0.95) for k in range(29)]    # rank above, pass
    rows += [(0.45 + 0.001 * k, 0.5) for k in range(29, 50)]  # rank above, fail target 2
    rows += [(0.3 - 0.001 * k, 0.95) for k in range(49)]     # rank below, fail target 1
    state, targets = _accepted_state(100, rows, alpha_final=0.95)
    d_old = targets.discrepancy(state.sim, state.alphas)
    median = state.pvals[0].copy()
    fails = ~targets.accept(state.sim, median)
    assert fails.sum() == 70
    pruned = update_tolerances(state, targets)
    assert pruned == 50 and state.n_accepted == 50
    fail_idx = np.flatnonzero(fails)
    worst = fail_idx[np.argsort(-d_old[fail_idx], kind="stable")[:50]]
    assert set(np.flatnonzero(state.status == PRUNED)) == set(worst)
    assert targets.accept(state.sim[state.accepted], state.alphas).all()
    # rolled back alphas are the tightest values all retained points satisfy
    kept = state.pvals[state.accepted]
    for j in range(2):
        assert state.alphas[j] == min(kept[:, j].min(), median[j])


def test_update_never_loosens_and_never_exceeds_final(rng):
    state, targets = _accepted_state(200, rng.uniform(0.01, 0.99, 200), alpha_final=0.3)
    state.alphas = np.array([0.2])
    update_tolerances(state, targets)
    assert 0.2 <= state.alphas[0] <= 0.3


# ---------------------------------------------------------------------------
# mixture density and weights
# ---------------------------------------------------------------------------

def test_mixture_at_t0_is_prior():
    priors = PriorSet([PriorSpec("a", "truncated_normal", -1, 2, 0.5, 1.0)])
    state = make_state(np.zeros((1, 1)), [[1.0]], linear_targets([1.0]), priors)
    x = np.linspace(-2, 3, 41)[:, None]
    assert np.array_equal(mixture_density(state, priors, x), priors.marginal_density(x))


def test_mixture_hand_computed_two_kernels():
    priors = PriorSet([PriorSpec("a", "uniform", 0, 4), PriorSpec("b", "uniform", -1, 1)])
    state = make_state(np.zeros((100, 2)), np.ones((100, 1)), linear_targets([1.0]), priors,
                       n_init=100, batch_per_center=50, n_centers=2)
    k1 = GaussianKernel([1.0, 0.0], [[0.5, 0.1], [0.1, 0.2]])
    k2 = GaussianKernel([3.0, 0.5], [[0.3, 0.0], [0.0, 0.4]])
    state.kernels = [k1, k2]
    x = np.array([[0.5, 0.2], [2.5, -0.5], [5.0, 0.0]])
    # kernels carry the 1e-10 * trace / p ridge
    h1 = stats.multivariate_normal(k1.mean, regularize(k1.cov)).pdf(x)
    h2 = stats.multivariate_normal(k2.mean, regularize(k2.cov)).pdf(x)
    pi = np.array([1 / 8, 1 / 8, 0.0])
    expected = 0.5 * pi + 0.25 * (h1 + h2)
    assert np.allclose(mixture_density(state, priors, x), expected, rtol=0, atol=1e-12)


def test_mixture_integrates_to_one():
    priors = PriorSet([PriorSpec("a", "truncated_normal", -1, 2, 0.5, 1.0)])
    state = make_state(np.zeros((300, 1)), np.ones((300, 1)), linear_targets([1.0]), priors,
                       n_init=300, batch_per_center=40, n_centers=3)
    state.kernels = [GaussianKernel([m], [[s]]) for m, s in
                     [(0.1, 0.04), (1.5, 0.2), (-0.8, 0.3), (0.2, 0.05), (1.9, 0.1), (0.0, 1.0)]]
    f = lambda x: float(mixture_density(state, priors, [[x]])[0])
    total = sum(quad(f, a, b, limit=200)[0] for a, b in [(-12, -1), (-1, 2), (2, 12)])
    assert total == pytest.approx(1.0, abs=1e-4)


def test_weights_equal_at_t0_uniform():
    priors = uniform_priors(2)
    state = make_state(np.random.default_rng(1).random((10, 2)), np.ones((10, 1)),
                       linear_targets([1.0]), priors, status=[ACCEPTED] * 8 + [REJECTED] * 2)
    w = compute_weights(state, priors)
    assert np.allclose(w[:8], 1 / 8, rtol=1e-14) and w[8:].tolist() == [0.0, 0.0]


def test_weights_empty_posterior():
    priors = uniform_priors(1)
    state = make_state([[0.5]], [[1.0]], linear_targets([1.0]), priors, status=[REJECTED])
    with pytest.raises(EmptyPosteriorError):
        compute_weights(state, priors)


def test_ess_examples():
    assert effective_sample_size(np.full(37, 1 / 37)) == pytest.approx(37, abs=1e-12)
    assert effective_sample_size([0.5, 0.25, 0.25]) == pytest.approx(8 / 3, abs=1e-12)
    assert effective_sample_size([1.0, 0, 0, 0]) == 1.0
    with pytest.raises(EmptyPosteriorError):
        effective_sample_size([0.0, 0.0])


# ---------------------------------------------------------------------------
# driver, resampling, checkpoints
# ---------------------------------------------------------------------------

def small_conjugate():
    model = ConjugateNormalModel(0.0, 1.0, [0.8], [1.0], [4], alpha_final=0.3)
    cfg = EngineConfig(seed=11, n_init=300, n_centers=3, batch_per_center=60, n_post=150,
                       max_iterations=60, n_cov_points=100_000)
    return model, model.targets(), cfg


def test_max_iterations_zero_returns_initialization():
    model, targets, cfg = small_conjugate()
    cfg = EngineConfig(**{**cfg.__dict__, "max_iterations": 0})
    res = run(cfg, model, targets)
    assert res.iterations == 0 and not res.converged and res.n_total == 300
    assert res.n_accepted == 300 and len(res.history) == 1


def test_small_conjugate_run_converges_with_invariants():
    model, targets, cfg = small_conjugate()
    seen = []
    res = run(cfg, model, targets, on_iteration=lambda s: seen.append(
        (s.iteration, s.n_total, s.alphas.copy(), len(s.kernels))))
    assert res.converged and res.ess >= cfg.n_post
    for it, n_total, _, n_k in seen:
        assert n_total == cfg.n_init + cfg.per_iteration * it and n_k == cfg.n_centers * it
    alphas = np.array([a for _, _, a, _ in seen])
    assert np.all(np.diff(alphas, axis=0) >= 0) and alphas.max() <= 0.3
    assert targets.accept(res.sim, res.alphas).all()
    assert res.weights.sum() == pytest.approx(1.0)
    mean, sd = model.posterior()
    w_mean = res.weights @ res.theta[:, 0]
    assert abs(w_mean - mean) < 0.1


def test_resample_examples(rng):
    k = 5
    res = CalibrationResult(["a"], [], np.arange(k, dtype=float)[:, None], np.zeros((k, 0)),
                            np.ones(k), np.zeros(k), np.full(k, 1 / k), np.zeros(0), [], 0, 0,
                            None, True, True, [], [], {})
    n = 50_000
    draws = resample_posterior(res, n, rng)[:, 0]
    counts = np.bincount(draws.astype(int), minlength=k)
    assert np.all(np.abs(counts - n / k) < 4 * np.sqrt(n * (1 / k) * (1 - 1 / k)))
    res.weights = np.array([0, 0, 1.0, 0, 0])
    assert np.all(resample_posterior(res, 100, rng) == 2.0)
    res.weights = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    d = resample_posterior(res, n, rng)[:, 0]
    mu = res.weights @ res.theta[:, 0]
    sd = np.sqrt(res.weights @ (res.theta[:, 0] - mu) ** 2)
    assert abs(d.mean() - mu) < 4 * sd / np.sqrt(n)
    res.weights = np.zeros(k)
    with pytest.raises(EmptyPosteriorError):
        resample_posterior(res, 10, rng)


def test_checkpoint_round_trip(tmp_path):
    model, targets, cfg = small_conjugate()
    cfg = EngineConfig(**{**cfg.__dict__, "max_iterations": 4})
    res = run(cfg, model, targets, checkpoint=tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json", targets, model.priors)
    s = res.state
    for name in ("theta", "status", "origin_iter", "origin_center", "n_evals", "alphas", "pvals"):
        assert np.array_equal(getattr(back, name), getattr(s, name)), name
    assert np.array_equal(back.sim, s.sim, equal_nan=True)
    assert [k.mean.tolist() for k in back.kernels] == [k.mean.tolist() for k in s.kernels]
    assert [k.cov.tolist() for k in back.kernels] == [k.cov.tolist() for k in s.kernels]
    assert back.history == s.history and back.iteration == s.iteration
    assert json.loads(json.dumps(state_to_dict(back))) == state_to_dict(s)


def test_resume_equals_uninterrupted(tmp_path):
    model, targets, cfg = small_conjugate()
    full = run(cfg, model, targets)
    part = EngineConfig(**{**cfg.__dict__, "max_iterations": 3})
    run(part, model, targets, checkpoint=tmp_path / "ck.json")
    state = load_checkpoint(tmp_path / "ck.json", targets, model.priors)
    resumed = run(cfg, model, targets, state=state)
    assert np.array_equal(full.theta, resumed.theta)
    assert np.array_equal(full.weights, resumed.weights)
    assert full.history == resumed.history


def test_incompatible_checkpoint_rejected(tmp_path):
    model, targets, cfg = small_conjugate()
    res = run(EngineConfig(**{**cfg.__dict__, "max_iterations": 1}), model, targets)
    save_checkpoint(res.state, tmp_path / "ck.json")
    state = load_checkpoint(tmp_path / "ck.json", targets)
    other = EngineConfig(**{**cfg.__dict__, "batch_per_center": 61})
    with pytest.raises(CheckpointError):
        run(other, model, targets, state=state)
    with pytest.raises(CheckpointError):
        state_from_dict({"format": "other"}, targets)


def test_diagnostic_weights_before_final():
    model, targets, cfg = small_conjugate()
    res = run(EngineConfig(**{**cfg.__dict__, "max_iterations": 1}), model, targets)
    assert not res.at_final_tolerance and not res.converged
    assert res.weights.sum() == pytest.approx(1.0)
    assert any("diagnostic" in m for m in res.messages)


def test_make_result_point_view():
    model, targets, cfg = small_conjugate()
    res = run(EngineConfig(**{**cfg.__dict__, "max_iterations": 2}), model, targets)
    s = res.state
    i = int(s.accepted[0])
    pt = s.point(i, targets)
    assert pt.status == "accepted" and pt.rho_min == s.pvals[i].min()
    assert make_result(s, targets, model.priors).n_accepted == s.n_accepted


def test_evaluator_parallel_matches_serial():
    model, targets, cfg = small_conjugate()
    jobs = [(i, 0, np.array([x])) for i, x in enumerate(np.linspace(-2, 3, 37))]
    with Evaluator(model, targets, 9, workers=1) as ev:
        a = ev(jobs, [0.1])
    with Evaluator(model, targets, 9, workers=3) as ev:
        b = ev(jobs, [0.1])
    assert [r.sim.tolist() for r in a] == [r.sim.tolist() for r in b]
    assert [r.accepted for r in a] == [r.accepted for r in b]
