import numpy as np
import pytest
from scipy import stats

from imabc.engine import EngineConfig, run
from imabc.reference import (ConjugateNormalModel, SymmetricBimodalModel, bimodal_simulate,
                             conjugate_posterior, conjugate_simulate, default_conjugate)


def test_conjugate_simulate_noise_free(rng):
    assert conjugate_simulate(1.234, 100, rng, sigma=0.0) == 1.234


def test_conjugate_simulate_spread():
    rng = np.random.default_rng(1)
    out = np.array([conjugate_simulate(0.0, 400, rng, sigma=8.0) for _ in range(20)])
    lo, hi = stats.chi2.ppf([0.0005, 0.9995], 19)
    assert lo < 19 * out.var(ddof=1) / (8.0 / 20) ** 2 < hi


def test_conjugate_simulate_mean():
    rng = np.random.default_rng(2)
    n, m, s = 100_000, 100, 10.0
    out = np.array([conjugate_simulate(0.0, m, rng, sigma=s) for _ in range(n)])
    assert abs(out.mean()) < 4 * s / np.sqrt(m * n)


def test_conjugate_posterior_examples():
    mean, sd = conjugate_posterior(0.0, 1.0, [1.0], [0.5])
    assert mean == pytest.approx(0.8, abs=1e-15) and sd ** 2 == pytest.approx(0.2, abs=1e-15)
    assert conjugate_posterior(1.5, 2.0) == (1.5, 2.0)
    assert conjugate_posterior(1.5, 2.0, [1.5, 1.5], [0.3, 0.7])[0] == pytest.approx(1.5, abs=1e-15)


def test_default_conjugate_design():
    model = default_conjugate()
    mean, sd = model.posterior()
    assert mean == pytest.approx(2.7966, abs=1e-4) and sd == pytest.approx(0.48468, abs=1e-5)
    t = model.targets()
    assert t.ids == ["y1", "y2", "y3"]
    assert np.allclose(t.se_lo, [0.8, 1.0, 1.2]) and np.array_equal(t.se_lo, t.se_hi)
    # prior truncation at +-10 sd carries no visible mass
    assert model.priors.density([[2.0]])[0] == pytest.approx(stats.norm.pdf(0), rel=1e-12)


def test_conjugate_model_shape_checks():
    with pytest.raises(ValueError):
        ConjugateNormalModel(0, 1, [1.0, 2.0], [1.0], [10, 10])


def test_bimodal_symmetric_outputs():
    a = [bimodal_simulate(1.7, 50, np.random.default_rng(k)) for k in range(50)]
    b = [bimodal_simulate(-1.7, 50, np.random.default_rng(k)) for k in range(50)]
    assert a == b
    assert bimodal_simulate(-2.5, 10, np.random.default_rng(0), sigma=0.0) == 2.5


def test_bimodal_engine_covers_both_modes():
    model = SymmetricBimodalModel()
    cfg = EngineConfig(seed=4, n_init=1000, n_centers=4, batch_per_center=100, n_post=300,
                       max_iterations=50)
    res = run(cfg, model, model.targets())
    th = res.theta[:, 0]
    assert (th > 0).any() and (th < 0).any()
    w = res.weights
    mu = w @ th
    mcse = np.sqrt(w @ (th - mu) ** 2 / res.ess)
    assert abs(mu) < 3 * mcse
    centers = np.array([k.mean[0] for k in res.state.kernels])
    assert (centers > 0).any() and (centers < 0).any()
