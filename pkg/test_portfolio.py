#!/usr/bin/env python3
"""Tests for scenario covariances, MV and minimum-CVaR books, and model averaging"""
import numpy as np
import pandas as pd
import pytest

from data_model import CopulaParams, Dag, DagCopulaKey, DegenerateDataError, InvalidInputError
from portfolio import (average_weights, covariance_from_scenarios, estimate_cvar, model_average, mv_cvars,
                       single_model_forecast, solve_mcvar, solve_mv, write_cvar_csv, write_weights_csv)
from simulate import ScenarioSet, draw_parameters, simulate_panel


def scenario_set(K=500, p=3, seed=0):
    rng = np.random.default_rng(seed)
    mix = np.array([[1.0, 0.3, 0.0], [0.0, 1.5, 0.4], [0.2, 0.0, 0.8]])[:p, :p]
    returns = rng.standard_t(5, size=(K, p)) @ mix
    return ScenarioSet(returns, tuple(f"S{j}" for j in range(p)))


def test_mv_identity_gives_equal_weights():
    solution = solve_mv(np.eye(4))
    assert solution.weights == pytest.approx(np.full(4, 0.25))
    assert solution.objective == pytest.approx(0.25)
    assert solution.kind == 'mv'


def test_mv_diagonal():
    assert solve_mv(np.diag([1.0, 4.0])).weights == pytest.approx([0.8, 0.2])


def test_mv_satisfies_first_order_conditions():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5))
    cov = A @ A.T + 0.5 * np.eye(5)
    w = solve_mv(cov).weights
    gradient = cov @ w
    assert w.sum() == pytest.approx(1.0)
    assert gradient == pytest.approx(np.full(5, gradient[0]))


def test_mv_long_only_removes_short():
    cov = np.array([[1.0, 1.5], [1.5, 4.0]])
    assert solve_mv(cov).weights == pytest.approx([1.25, -0.25])
    assert solve_mv(cov, long_only=True).weights == pytest.approx([1.0, 0.0], abs=1e-6)


def test_mv_input_checks():
    with pytest.raises(InvalidInputError):
        solve_mv(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        solve_mv(np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_covariance_keeps_correlation_and_sets_diagonal():
    scenarios = scenario_set()
    lam = np.array([2.0, 0.5, 1.2])
    cov = covariance_from_scenarios(scenarios, lam)
    second = scenarios.returns.T @ scenarios.returns / scenarios.K
    assert np.diag(cov) == pytest.approx(lam, rel=1e-14)
    assert cov[0, 1] / np.sqrt(lam[0] * lam[1]) == pytest.approx(second[0, 1] / np.sqrt(second[0, 0] * second[1, 1]))
    assert np.array_equal(cov, cov.T)


def test_covariance_input_checks():
    scenarios = scenario_set(K=3)
    with pytest.raises(InvalidInputError):
        covariance_from_scenarios(scenarios, [1.0, 1.0, 1.0])
    with pytest.raises(InvalidInputError):
        covariance_from_scenarios(scenario_set(), [1.0, 0.0, 1.0])
    zero = ScenarioSet(np.column_stack([np.ones(10), np.zeros(10)]), ('A', 'B'))
    with pytest.raises(DegenerateDataError):
        covariance_from_scenarios(zero, [1.0, 1.0])


def test_cvar_order_statistic_example():
    assert estimate_cvar([-3.0, -1.0, 0.0, 1.0, 2.0], 0.2) == pytest.approx(3.0)
    assert estimate_cvar([2.0, -3.0, 1.0, 0.0, -1.0], 0.4) == pytest.approx(2.0)


def test_cvar_scenario_objective():
    r = np.array([-3.0, -1.0, 0.0, 1.0, 2.0])
    assert estimate_cvar(r, 0.2, var_level=-1.0) == pytest.approx(1.0 + 2.0 / 1.0)
    assert estimate_cvar(r, 0.4, var_level=-1.0) == pytest.approx(1.0 + 2.0 / 2.0)


def test_cvar_input_checks():
    with pytest.raises(InvalidInputError):
        estimate_cvar([1.0, 2.0], 0.1)
    with pytest.raises(InvalidInputError):
        estimate_cvar([], 0.1)
    with pytest.raises(InvalidInputError):
        estimate_cvar([1.0, 2.0], 1.5)
    with pytest.raises(DegenerateDataError):
        estimate_cvar(np.ones(10), 0.2)


def test_mcvar_program_is_self_consistent():
    scenarios = scenario_set(K=800)
    alpha = 0.05
    solution = solve_mcvar(scenarios, alpha)
    assert solution.weights.sum() == pytest.approx(1.0)
    assert solution.kind == 'mcvar' and solution.alpha == alpha
    portfolio = scenarios.returns @ solution.weights
    assert solution.objective == pytest.approx(estimate_cvar(portfolio, alpha, solution.var_level), abs=1e-6)

    equal = scenarios.returns @ np.full(3, 1.0 / 3.0)
    level = np.quantile(equal, alpha)
    assert solution.objective <= estimate_cvar(equal, alpha, level) + 1e-6


def test_mcvar_long_only():
    scenarios = scenario_set(K=400, seed=2)
    solution = solve_mcvar(scenarios, 0.1, long_only=True)
    assert np.all(solution.weights >= -1e-9)
    assert solution.objective >= solve_mcvar(scenarios, 0.1).objective - 1e-6
    with pytest.raises(InvalidInputError):
        solve_mcvar(scenarios, 0.0)


def test_mv_cvars_one_per_alpha():
    scenarios = scenario_set()
    solution = solve_mv(covariance_from_scenarios(scenarios, [1.0, 1.0, 1.0]))
    values = mv_cvars(scenarios, solution, [0.01, 0.05, 0.1])
    assert len(values) == 3
    assert values[0] >= values[1] >= values[2]


def test_average_weights():
    assert average_weights([3.0, 3.0]) == pytest.approx([0.5, 0.5])
    assert average_weights([1000.0, 1000.0 + np.log(3.0)]) == pytest.approx([0.25, 0.75])
    with pytest.raises(InvalidInputError):
        average_weights([])
    with pytest.raises(InvalidInputError):
        average_weights([1.0, np.inf])


@pytest.fixture(scope="module")
def small_models():
    dag = Dag.from_edges(2, [(0, 1)])
    first = draw_parameters(dag, 2, seed=1, dag_copulas={DagCopulaKey(1, 0, ()): CopulaParams(0.5, 0.05, 0.9, 6.0)})
    second = draw_parameters(Dag.empty(2), 2, seed=2)
    history = simulate_panel(first, 60, seed=3)
    return first, second, history


def test_single_model_average_equals_forecast(small_models):
    first, _, history = small_models
    averaged = model_average([first], [12.0], history, 300, seed=5)
    single = single_model_forecast(first, history, 300, seed=5)
    assert averaged.weights == pytest.approx([1.0])
    assert np.array_equal(averaged.scenarios.returns, single.scenarios.returns)
    assert np.array_equal(averaged.covariance, single.covariance)


def test_two_model_average_mixes_rows(small_models):
    first, second, history = small_models
    averaged = model_average([first, second], [0.0, 0.0], history, 400, seed=6)
    assert averaged.weights == pytest.approx([0.5, 0.5])
    a, b = (f.scenarios.returns for f in averaged.forecasts)
    rows = averaged.scenarios.returns
    from_a = np.all(rows == a, axis=1)
    from_b = np.all(rows == b, axis=1)
    assert np.all(from_a | from_b)
    assert 100 < from_a.sum() < 300
    assert averaged.covariance == pytest.approx(0.5 * averaged.forecasts[0].covariance
                                                + 0.5 * averaged.forecasts[1].covariance)
    with pytest.raises(InvalidInputError):
        model_average([first, second], [0.0], history, 10, seed=1)


def test_weights_and_cvar_csv(tmp_path):
    write_weights_csv([('2024-01-05', ['A', 'B'], np.array([0.25, 0.75]))], str(tmp_path / 'w.csv'), book='mv')
    frame = pd.read_csv(tmp_path / 'w.csv')
    assert list(frame.columns) == ['date', 'symbol', 'weight', 'book']
    assert frame['weight'].tolist() == [0.25, 0.75]

    write_cvar_csv([('2024-01-05', 0.05, 1.5)], str(tmp_path / 'cvar.csv'))
    assert pd.read_csv(tmp_path / 'cvar.csv').iloc[0]['cvar'] == 1.5
