#!/usr/bin/env python3
"""Tests for the GARCH(1,1)-t marginal model"""
import numpy as np
import pytest
from scipy.integrate import quad

from data_model import DegenerateDataError, GarchParams, InvalidInputError
from marginal_garch import (fit_garch, forecast_next_variance, forecast_variance, garch_filter, garch_loglik,
                            marginal_cdf, marginal_quantile, read_marginals_csv, std_t_density,
                            write_marginals_csv)

TRUE = GarchParams(omega=0.1, alpha=0.06, beta=0.88, v=7.0)


def simulate_garch(params: GarchParams, T: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.standard_t(params.v, size=T) * np.sqrt((params.v - 2.0) / params.v)
    r = np.empty(T)
    sigma2 = params.omega / (1.0 - params.alpha - params.beta)
    for t in range(T):
        r[t] = np.sqrt(sigma2) * z[t]
        sigma2 = params.omega + params.alpha * r[t] ** 2 + params.beta * sigma2
    return r


def test_filter_matches_recursion():
    returns = np.array([1.0, -2.0, 0.5, 3.0])
    sigma2 = garch_filter(TRUE, returns)
    expected = [TRUE.omega / (1 - TRUE.alpha - TRUE.beta)]
    for r in returns[:-1]:
        expected.append(TRUE.omega + TRUE.alpha * r ** 2 + TRUE.beta * expected[-1])
    assert sigma2 == pytest.approx(expected, rel=1e-12)


def test_filter_rejects_invalid_params():
    with pytest.raises(InvalidInputError):
        garch_filter(GarchParams(0.1, 0.5, 0.6, 5.0), [1.0, 2.0])


@pytest.mark.parametrize("v", [3.0, 5.0, 10.0])
def test_density_has_unit_mass_and_given_variance(v):
    sigma2 = 2.5
    mass, _ = quad(lambda r: std_t_density(r, sigma2, v), -np.inf, np.inf)
    second, _ = quad(lambda r: r * r * std_t_density(r, sigma2, v), -np.inf, np.inf, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-6)
    if v > 4:
        assert second == pytest.approx(sigma2, rel=1e-3)


def test_density_rejects_small_dof():
    with pytest.raises(InvalidInputError):
        std_t_density(0.0, 1.0, 2.0)


def test_cdf_and_quantile_are_inverse():
    u = np.linspace(0.01, 0.99, 25)
    r = marginal_quantile(u, 1.7, 6.0)
    assert marginal_cdf(r, 1.7, 6.0) == pytest.approx(u, abs=1e-10)
    assert marginal_cdf(0.0, 1.0, 6.0) == pytest.approx(0.5)


def test_cdf_is_clipped_away_from_bounds():
    u = marginal_cdf(np.array([-1e6, 1e6]), 1.0, 5.0)
    assert 0 < u[0] < 1e-10
    assert 1 - 1e-10 < u[1] < 1


def test_forecast_formula():
    assert forecast_variance(TRUE, 2.0, 1.5) == pytest.approx(0.1 + 0.06 * 4 + 0.88 * 1.5)
    returns = simulate_garch(TRUE, 200, seed=1)
    sigma2 = garch_filter(TRUE, returns)
    assert forecast_next_variance(TRUE, returns) == pytest.approx(
        TRUE.omega + TRUE.alpha * returns[-1] ** 2 + TRUE.beta * sigma2[-1])


def test_fit_rejects_short_and_constant_series():
    with pytest.raises(InvalidInputError):
        fit_garch(np.ones(10))
    with pytest.raises(DegenerateDataError):
        fit_garch(np.zeros(100))


def test_fit_is_no_worse_than_start():
    returns = simulate_garch(TRUE, 1500, seed=3)
    start = GarchParams(0.2, 0.1, 0.7, 10.0)
    fit = fit_garch(returns, init=start)
    assert fit.loglik >= garch_loglik(start, returns) - 1e-9
    assert fit.params.violations() == []


def test_fit_single_seed_roughly_recovers():
    returns = simulate_garch(TRUE, 4000, seed=11)
    fit = fit_garch(returns)
    assert abs(fit.params.alpha - TRUE.alpha) < 0.04
    assert abs(fit.params.beta - TRUE.beta) < 0.08


@pytest.mark.slow
def test_fit_recovery_over_seeds():
    d_alpha, d_beta = [], []
    for seed in range(20):
        fit = fit_garch(simulate_garch(TRUE, 5000, seed=100 + seed))
        d_alpha.append(abs(fit.params.alpha - TRUE.alpha))
        d_beta.append(abs(fit.params.beta - TRUE.beta))
    assert np.median(d_alpha) <= 0.02
    assert np.median(d_beta) <= 0.04


def test_marginals_csv(tmp_path):
    returns = simulate_garch(TRUE, 300, seed=5)
    fits = [fit_garch(returns), fit_garch(-returns)]
    path = str(tmp_path / 'marginals.csv')
    write_marginals_csv(path, ['A', 'B'], fits)
    loaded = read_marginals_csv(path, ['B', 'A'])
    assert loaded[0].beta == pytest.approx(fits[1].params.beta, rel=1e-12)
    assert loaded[1].omega == pytest.approx(fits[0].params.omega, rel=1e-12)
    assert loaded[1].v == pytest.approx(fits[0].params.v, rel=1e-12)
    with pytest.raises(InvalidInputError):
        read_marginals_csv(path, ['C'])
