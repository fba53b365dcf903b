import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import make_theta
from panicfsv.backtest import (
    coverage_tests,
    forecast_cov,
    min_variance_weights,
    run_backtest,
    stationary_forecast_cov,
    var_quantile,
)
from panicfsv.exceptions import ConfigurationError, FilterDegeneracyError
from panicfsv.model import conditional_cov, simulate
from panicfsv.rbpf import ParticleCloud
from panicfsv.regimes import enumerate_selectors


def _one_particle(x, belief):
    return ParticleCloud(np.atleast_2d(x), np.atleast_2d(belief), np.zeros(1))


def test_single_particle_no_panic_closed_form(theta3):
    space = enumerate_selectors(3, 0)
    cloud = _one_particle(theta3.mu, [1.0])
    expected = np.exp(theta3.mu[0] + theta3.q[0] / 2) * theta3.B @ theta3.B.T + np.diag(theta3.R)
    np.testing.assert_allclose(forecast_cov(cloud, theta3, space), expected, rtol=1e-13)


def test_panic_term_is_masked_rank_one(theta3):
    space = enumerate_selectors(3, 2)
    j = 6  # regime 6 selects assets 1 and 3
    pinned = theta3.replace(p=1 - 1e-15)
    cloud = _one_particle([0.0, 0.0], np.eye(7)[j - 1])
    got = forecast_cov(cloud, pinned, space)
    no_panic = forecast_cov(cloud, pinned.replace(mu=[pinned.mu[0], -2000.0]), space)
    d = space.masks[j - 1]
    b = theta3.B[:, 0]
    scale = np.exp(pinned.mu[1] * (1 - pinned.phi[1]) + pinned.q[1] / 2)
    np.testing.assert_allclose(got - no_panic, scale * np.outer(b * d, b * d), rtol=1e-9, atol=1e-12)


def test_forecast_matches_monte_carlo_of_one_particle(theta3):
    space = enumerate_selectors(3, 1)
    rng = np.random.default_rng(0)
    x0 = np.array([0.9, 0.4])
    belief = np.array([0.4, 0.3, 0.2, 0.1])
    cloud = _one_particle(x0, belief)
    n = 200_000
    x1 = theta3.mu + theta3.phi * (x0 - theta3.mu) + np.sqrt(theta3.q) * rng.standard_normal((n, 2))
    probs = theta3.transition(4).predict(belief)
    reg = rng.choice(4, size=n, p=probs)
    f = np.exp(x1 / 2) * rng.standard_normal((n, 2))
    b = theta3.B[:, 0]
    y = (f[:, :1] * b + f[:, 1:] * b * space.masks[reg] + np.sqrt(theta3.R) * rng.standard_normal((n, 3)))
    c = y - y.mean(axis=0)
    prods = c[:, :, None] * c[:, None, :]
    se = prods.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(prods.mean(axis=0) - forecast_cov(cloud, theta3, space)) < 3.5 * se)


def test_stationary_forecast_is_average_conditional_cov(theta3):
    space = enumerate_selectors(3, 1)
    theta = theta3.replace(q=[0.0, 0.0])
    expected = np.mean([conditional_cov(theta, space, s, theta.mu) for s in range(1, 5)], axis=0)
    np.testing.assert_allclose(stationary_forecast_cov(theta, space), expected, rtol=1e-13)


def test_min_variance_weights_closed_forms():
    np.testing.assert_allclose(min_variance_weights(np.eye(4)), 0.25)
    w = min_variance_weights(np.diag([1.0, 2.0, 4.0]))
    np.testing.assert_allclose(w, np.array([1, 0.5, 0.25]) / 1.75)


def test_min_variance_beats_random_portfolios():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + 0.1 * np.eye(5)
    w = min_variance_weights(cov)
    assert w.sum() == pytest.approx(1.0)
    v = rng.normal(size=(10_000, 5))
    v /= v.sum(axis=1, keepdims=True)
    assert np.all(w @ cov @ w <= np.einsum("ia,ab,ib->i", v, cov, v) + 1e-12)


def test_var_quantile_examples():
    assert var_quantile(np.zeros(2), np.eye(2), [1.0, 0.0], 0.05) == pytest.approx(-1.6449, abs=1e-4)
    assert var_quantile([0.3, -0.1], np.eye(2), [0.5, 0.5], 0.5) == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        var_quantile(np.zeros(2), np.eye(2), [1.0, 0.0], 0.6)


def test_var_quantile_matches_simulation():
    rng = np.random.default_rng(2)
    mean, cov, w = np.array([0.1, 0.2, 0.0]), np.array([[2, 0.5, 0], [0.5, 1, 0.2], [0, 0.2, 3.0]]), np.array([0.2, 0.5, 0.3])
    draws = rng.multivariate_normal(mean, cov, size=200_000) @ w
    q = var_quantile(mean, cov, w, 0.05)
    # binomial error of the empirical CDF at the quantile
    assert abs(np.mean(draws < q) - 0.05) < 3 * np.sqrt(0.05 * 0.95 / len(draws))


def _lr_uc_by_hand(x, T, a):
    ph = x / T
    return -2 * ((T - x) * np.log(1 - a) + x * np.log(a) - (T - x) * np.log(1 - ph) - x * np.log(ph))


def test_rate_equal_to_alpha_gives_zero_statistic():
    flags = np.zeros(100, dtype=bool)
    flags[::20] = True
    assert coverage_tests(flags, 0.05)["LR_uc"] == pytest.approx(0.0, abs=1e-12)


def test_anchor_counts_fail_to_reject():
    T, x = 336, 22
    flags = np.zeros(T, dtype=bool)
    flags[np.linspace(0, T - 1, x).round().astype(int)] = True
    res = coverage_tests(flags, 0.05)
    assert res["exceedances"] == 22
    assert res["LR_uc"] == pytest.approx(_lr_uc_by_hand(22, 336, 0.05), rel=1e-12)
    assert res["LR_uc"] == pytest.approx(1.55037, abs=1e-5)
    assert res["transitions"][3] == 0  # evenly spaced flags never repeat
    assert res["p_uc"] > 0.05 and res["p_cc"] > 0.05


def test_christoffersen_statistic_by_hand():
    flags = np.array([0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0])
    res = coverage_tests(flags, 0.1)
    n00, n01, n10, n11 = res["transitions"]
    assert (n00, n01, n10, n11) == (10, 3, 3, 3)
    p01, p11, p1 = 3 / 13, 3 / 6, 6 / 19
    ll1 = 10 * np.log(1 - p01) + 3 * np.log(p01) + 3 * np.log(1 - p11) + 3 * np.log(p11)
    ll0 = 13 * np.log(1 - p1) + 6 * np.log(p1)
    assert res["LR_ind"] == pytest.approx(-2 * (ll0 - ll1), rel=1e-12)
    assert res["LR_cc"] == pytest.approx(res["LR_uc"] + res["LR_ind"], rel=1e-14)
    assert res["p_cc"] == pytest.approx(stats.chi2.sf(res["LR_cc"], 2))


def test_clustered_exceedances_reject():
    flags = np.zeros(400, dtype=bool)
    flags[100:120] = True
    assert coverage_tests(flags, 0.05)["p_cc"] < 1e-6


def test_degenerate_sequence_warns_and_is_finite():
    with pytest.warns(RuntimeWarning):
        res = coverage_tests(np.zeros(50, dtype=bool), 0.05)
    assert np.isfinite(res["LR_cc"])


@pytest.fixture(scope="module")
def report():
    theta = make_theta(3)
    space = enumerate_selectors(3, 1)
    y, _ = simulate(theta, space, 60, seed=9)
    return y, run_backtest(theta, space, y[30:], n_particles=50, seed=1, train_returns=y[:30])


def test_report_rows_and_self_consistency(report):
    y, rep = report
    oos = y[30:]
    assert rep.T == len(oos) and rep.start == "warm"
    assert rep.var.shape == (30,) and rep.weights.shape == (30, 3)
    np.testing.assert_allclose(rep.portfolio_returns, np.einsum("ta,ta->t", rep.weights, oos))
    np.testing.assert_array_equal(rep.exceedances, rep.portfolio_returns < rep.var)
    np.testing.assert_allclose(rep.weights.sum(axis=1), 1.0)
    np.testing.assert_allclose(rep.wealth_equal, np.cumprod(1 + oos.mean(axis=1) / 100))
    assert rep.tests["T"] == 30


def test_forecast_for_week_t_uses_information_to_t_minus_one(report):
    y, rep = report
    theta = make_theta(3)
    space = enumerate_selectors(3, 1)
    again = run_backtest(theta, space, y[30:40], n_particles=50, seed=1, train_returns=y[:30])
    np.testing.assert_allclose(again.covs, rep.covs[:10], rtol=1e-12)


def test_fresh_start_first_week_is_stationary(theta3):
    space = enumerate_selectors(3, 1)
    y, _ = simulate(theta3, space, 5, seed=1)
    rep = run_backtest(theta3, space, y, n_particles=20, seed=0)
    assert rep.start == "fresh"
    np.testing.assert_allclose(rep.covs[0], stationary_forecast_cov(theta3, space))
    mix = run_backtest(theta3, space, y, n_particles=20, seed=0, var_mode="mixture")
    assert mix.var[0] == pytest.approx(rep.var[0])
    assert np.all(np.isfinite(mix.var))


def test_empty_horizon_gives_empty_report(theta3):
    rep = run_backtest(theta3, enumerate_selectors(3, 1), np.zeros((0, 3)))
    assert rep.T == 0 and rep.exceedance_count == 0 and rep.tests is None


def test_degeneracy_names_out_of_sample_week(theta3):
    space = enumerate_selectors(3, 1)
    y, _ = simulate(theta3, space, 10, seed=1)
    y[7, 1] = 1e200
    with pytest.raises(FilterDegeneracyError, match="out-of-sample week 3"):
        run_backtest(theta3, space, y[5:], n_particles=10, seed=0, train_returns=y[:5])
