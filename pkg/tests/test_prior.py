import logging

import numpy as np
import pytest

from dcbo import builtin
from dcbo.graph import NodeId
from dcbo.prior import (
    CausalPrior,
    Decision,
    PriorError,
    build_prior,
    estimate_do_effect,
    fit_scm,
    true_fitted_scm,
)
from dcbo.scm import sample_observational

Y0_STAR = -1.2
Z0_STAR = 2.5
HISTORY = (Decision(0, ("Z",), (Z0_STAR,), Y0_STAR),)


def f_y_nonpast(z):
    return np.cos(z) - np.exp(-z / 20.0)


@pytest.fixture(scope="module")
def true_stat(stat):
    return true_fitted_scm(stat)


def test_z_prior_matches_closed_form(true_stat):
    grid = np.linspace(-5.0, 20.0, 10)[:, None]
    prior = build_prior(true_stat, ("Z",), 1, HISTORY, n_mc=1, n_draws=20, seed=3)
    mean, var = prior.moments(grid)
    np.testing.assert_allclose(mean, Y0_STAR + f_y_nonpast(grid[:, 0]), atol=1e-6)
    np.testing.assert_allclose(var, 0.0, atol=1e-12)


def test_x_prior_matches_monte_carlo(true_stat):
    xs = np.array([-2.0, 0.0, 1.5])
    n_mc = 4000
    prior = build_prior(true_stat, ("X",), 1, HISTORY, n_mc=n_mc, n_draws=20, seed=11)
    mean = prior.mean(xs[:, None])
    rng = np.random.default_rng(99)
    n_ref = 200_000
    for x, m in zip(xs, mean):
        z1 = np.exp(-x) + Z0_STAR + rng.standard_normal(n_ref)
        vals = Y0_STAR + f_y_nonpast(z1)
        se = vals.std() * np.sqrt(1 / n_ref + 1 / n_mc)
        assert abs(m - vals.mean()) < 3 * se


def test_history_shift_is_additive(true_stat):
    grid = np.linspace(-5, 20, 7)[:, None]
    c = 0.75
    raised = (Decision(0, ("Z",), (Z0_STAR,), Y0_STAR + c),)
    a = build_prior(true_stat, ("Z",), 1, HISTORY, n_mc=50, seed=1).mean(grid)
    b = build_prior(true_stat, ("Z",), 1, raised, n_mc=50, seed=1).mean(grid)
    np.testing.assert_allclose(b - a, c, atol=1e-12)


def test_static_prior_ignores_history(true_stat):
    grid = np.linspace(-5, 20, 5)[:, None]
    with_h = build_prior(true_stat, ("Z",), 1, HISTORY, n_mc=20, seed=2, use_history=False)
    without = build_prior(true_stat, ("Z",), 1, (), n_mc=20, seed=2, use_history=False)
    np.testing.assert_allclose(with_h.mean(grid), without.mean(grid))


def test_t0_prior_has_no_shift(true_stat):
    grid = np.linspace(-5, 20, 5)[:, None]
    p = build_prior(true_stat, ("Z",), 0, (), n_mc=1, seed=0)
    np.testing.assert_allclose(p.mean(grid), f_y_nonpast(grid[:, 0]), atol=1e-12)


def test_single_draw_gives_zero_spread(stat):
    obs = sample_observational(stat.scm, 10, 5)
    fitted = fit_scm(stat.graph, obs)
    p = build_prior(fitted, ("Z",), 0, (), n_mc=20, n_draws=1, seed=0)
    assert p.spread == 0.0
    np.testing.assert_array_equal(p.std(np.array([[0.0], [3.0]])), 0.0)


def test_fitted_prior_variance_nonnegative_and_cached(stat):
    obs = sample_observational(stat.scm, 10, 5)
    fitted = fit_scm(stat.graph, obs)
    p = build_prior(fitted, ("X",), 1, HISTORY, n_mc=30, n_draws=20, seed=0)
    X = np.linspace(-5, 5, 9)[:, None]
    m1, v1 = p.moments(X)
    m2, v2 = p.moments(X[::-1])
    assert np.all(v1 >= 0) and np.all(p.std(X) >= 0)
    np.testing.assert_array_equal(m1, m2[::-1])


def test_prior_is_deterministic_in_seed(stat):
    obs = sample_observational(stat.scm, 10, 5)
    fitted = fit_scm(stat.graph, obs)
    X = np.linspace(-5, 5, 4)[:, None]
    a = build_prior(fitted, ("X",), 1, HISTORY, n_mc=40, seed=8).mean(X)
    b = build_prior(fitted, ("X",), 1, HISTORY, n_mc=40, seed=8).mean(X)
    np.testing.assert_array_equal(a, b)


def test_missing_slice_falls_back_to_zero(caplog):
    miss = builtin("miss")
    obs = sample_observational(miss.scm, 10, 1, miss.available)
    fitted = fit_scm(miss.graph, obs, stationary=False)
    t = next(t for t, a in enumerate(miss.available) if not a)
    with caplog.at_level(logging.WARNING, logger="dcbo.prior"):
        p = build_prior(fitted, ("Z",), t, (), n_mc=5)
    assert p.is_zero
    assert "zero-mean prior" in caplog.text
    m, v = p.moments(np.zeros((3, 1)))
    np.testing.assert_array_equal(m, 0.0)


def test_zero_prior():
    p = CausalPrior.zero(2)
    assert p.is_zero and p.n_dims == 2
    np.testing.assert_array_equal(p.std(np.ones((4, 2))), 0.0)


def test_missing_optimum_raises(true_stat):
    with pytest.raises(PriorError, match="no recorded optimum"):
        build_prior(true_stat, ("Z",), 2, HISTORY[:1], n_mc=2).mean(np.zeros((1, 1)))


def test_estimate_do_effect_matches_truth(stat, true_stat):
    from dcbo.scm import true_objective
    x = np.array([[0.5]])
    m, _ = estimate_do_effect(true_stat, ("X",), x, 0, n_mc=20_000, seed=4)
    ref = true_objective(stat.scm, ("X",), x, {}, 0, 20_000, 5)
    assert abs(m[0] - ref[0]) < 0.02


def test_true_fitted_scm_requires_split():
    with pytest.raises(PriorError):
        true_fitted_scm(builtin("multiv").__class__(**{
            **builtin("multiv").__dict__, "target_split": None}))
