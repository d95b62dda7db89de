#!/usr/bin/env python3
"""Tests for the weekly backtest: calendar, strategies, cost function, config and reports"""
import numpy as np
import pandas as pd
import pytest

from backtest import (BacktestConfig, WeekFit, WeekSlot, cost_function, cumulative_values, read_report,
                      run_backtest, simple_returns, strategy2_invests, weekly_schedule)
from data_model import CopulaParams, Dag, DagCopulaKey, GcGarchError, InvalidInputError, ReturnPanel
from simulate import draw_parameters, simulate_panel


def test_compounding():
    assert cumulative_values(10000.0, [1.01, 0.99])[-1] == pytest.approx(9999.0)
    assert cumulative_values(10000.0, []).size == 0


def test_simple_returns_from_percent_log_returns():
    assert simple_returns(100 * np.log(1.1)) == pytest.approx(0.1)
    assert simple_returns([0.0, -100 * np.log(2.0)]) == pytest.approx([0.0, -0.5])


def test_strategy2_gate():
    assert not strategy2_invests(0.05, [0.04])
    assert strategy2_invests(0.04, [0.05, 0.03])
    assert not strategy2_invests(0.01, [])
    assert not strategy2_invests(0.01, [np.nan, 0.02])


def test_cost_function_example():
    result = cost_function([-0.05, -0.01], [0.03, 0.02])
    assert result.cost == pytest.approx(0.02)
    assert result.exceedances == 1
    assert cost_function([0.01, 0.02], [0.03, 0.02]) == cost_function([], [])
    assert cost_function([0.01], [0.03]).cost is None
    with pytest.raises(InvalidInputError):
        cost_function([0.01, 0.02], [0.03])


def test_schedule_friday_to_monday():
    dates = ['2024-01-05', '2024-01-08', '2024-01-09', '2024-01-12', '2024-01-15']
    assert weekly_schedule(dates) == [WeekSlot(0, 1, 3), WeekSlot(3, 4, 4)]


def test_schedule_holiday_friday():
    # Good Friday closed: the week ends on Thursday
    dates = ['2024-03-27', '2024-03-28', '2024-04-01', '2024-04-02']
    assert weekly_schedule(dates) == [WeekSlot(1, 2, 3)]


def test_schedule_rejects_bad_dates():
    with pytest.raises(InvalidInputError):
        weekly_schedule(['2024-01-08', '2024-01-05'])
    with pytest.raises(InvalidInputError):
        weekly_schedule(['d0', 'd1'])


def test_config_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv('GCGARCH_WINDOW', '300')
    monkeypatch.setenv('GCGARCH_SEED', '7')
    path = tmp_path / 'backtest.env'
    path.write_text("GCGARCH_WINDOW=400\nGCGARCH_K=5000\nGCGARCH_ALPHAS=0.01,0.05\nGCGARCH_LONG_ONLY=true\n")

    assert BacktestConfig.load().window == 300
    config = BacktestConfig.load(str(path), {'K': 6000, 'ws': None})
    assert config.window == 400
    assert config.seed == 7
    assert config.K == 6000
    assert config.ws == 8
    assert config.alphas == (0.01, 0.05)
    assert config.long_only is True


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        BacktestConfig.load(str(tmp_path / 'missing.env'))
    unknown = tmp_path / 'unknown.env'
    unknown.write_text("GCGARCH_WINDOWS=400\n")
    with pytest.raises(ValueError):
        BacktestConfig.load(str(unknown))
    bad = tmp_path / 'bad.env'
    bad.write_text("GCGARCH_K=many\n")
    with pytest.raises(ValueError, match='GCGARCH_K'):
        BacktestConfig.load(str(bad))
    with pytest.raises(InvalidInputError):
        BacktestConfig(strategy=3).validate()
    with pytest.raises(InvalidInputError):
        BacktestConfig(K=100, alphas=(0.001,)).validate()


def test_config_fixed_dag():
    assert BacktestConfig().fixed_dag(3) is None
    assert BacktestConfig(dag_edges='0->1, 1->2').fixed_dag(3).edges() == [(0, 1), (1, 2)]


class ScriptedFitter:
    """Fixed weights every week, a given CVaR sequence, and one failing week"""

    def __init__(self, cvars, failing):
        self.cvars = cvars
        self.failing = failing

    def fit_week(self, panel, slot, week):
        if week == self.failing:
            raise GcGarchError("boom")
        return WeekFit(np.array([0.5, 0.5]), {0.05: 1.0}, {0.05: np.array([1.0, 0.0])}, {0.05: self.cvars[week]})


def trending_panel():
    dates = tuple(pd.bdate_range('2024-01-01', periods=130).strftime('%Y-%m-%d'))
    values = np.column_stack([np.zeros(130), np.full(130, 1.0), np.full(130, -1.0)])
    return ReturnPanel(dates, ('F', 'UP', 'DOWN'), values, 1)


@pytest.fixture
def scripted_report():
    config = BacktestConfig(window=100, K=100, alphas=(0.05,), reserve_weeks=2, ws=1)
    fitter = ScriptedFitter([2.0, 1.0, 1.5, None, 0.5, 3.0], failing=3)
    return run_backtest(trending_panel(), config, fitter=fitter)


def test_backtest_rows_and_units(scripted_report):
    report = scripted_report
    assert report.n_weeks == 4
    assert len(report.weekly) == 8
    assert report.errors and report.errors[0][1] == 'boom'
    mcvar = report.book_rows('mcvar', 0.05)
    assert mcvar['first_day_return'].to_numpy() == pytest.approx(np.full(4, 100 * np.expm1(0.01)))
    assert mcvar['growth'].to_numpy() == pytest.approx(np.full(4, np.exp(0.05)))
    assert mcvar['invest_date'].iloc[0] == '2024-06-03'


def test_backtest_carries_failed_week_forward(scripted_report):
    mcvar = scripted_report.book_rows('mcvar', 0.05)
    assert mcvar['cvar'].tolist() == [1.5, 1.5, 0.5, 3.0]
    assert mcvar['error'].iloc[1] == 'boom'
    assert mcvar['gate'].tolist() == [False, True, True, False]


def test_backtest_cumulative_values(scripted_report):
    values = scripted_report.cumulative_values()
    assert list(values.columns) == ['date', 'mv', 'mcvar_0.05', 'mcvar_0.05_s2']
    assert values['mcvar_0.05'].iloc[-1] == pytest.approx(10000 * np.exp(0.2))
    assert values['mcvar_0.05_s2'].iloc[-1] == pytest.approx(10000 * np.exp(0.1))
    mv_day = 0.5 * (np.expm1(0.01) + np.expm1(-0.01))
    assert values['mv'].iloc[-1] == pytest.approx(10000 * (1 + mv_day) ** 20)


def test_backtest_tables(scripted_report, tmp_path):
    costs = scripted_report.cost_table()
    assert costs['exceedances'].tolist() == [0, 0]
    summary = scripted_report.strategy2_summary()
    assert summary['weeks_invested'].iloc[0] == 2
    assert summary['avg_all_return'].iloc[0] == pytest.approx(100 * np.expm1(0.05))

    scripted_report.write(str(tmp_path))
    written = scripted_report.write_tables(str(tmp_path))
    assert len(written) == 5
    loaded = read_report(str(tmp_path))
    assert loaded.n_weeks == 4
    assert loaded.cumulative_values()['mcvar_0.05_s2'].iloc[-1] == pytest.approx(10000 * np.exp(0.1))


def test_backtest_needs_enough_weeks():
    config = BacktestConfig(window=100, K=100, alphas=(0.05,), reserve_weeks=8, ws=1)
    with pytest.raises(InvalidInputError):
        run_backtest(trending_panel(), config, fitter=ScriptedFitter([1.0] * 10, failing=-1))


@pytest.mark.slow
def test_backtest_end_to_end_with_fixed_graph():
    dag = Dag.from_edges(2, [(0, 1)])
    model = draw_parameters(dag, 2, seed=1, dag_copulas={DagCopulaKey(1, 0, ()): CopulaParams(0.5, 0.05, 0.9, 6.0)})
    panel = simulate_panel(model, 175, seed=2)
    config = BacktestConfig(window=150, K=500, alphas=(0.05,), reserve_weeks=1, ws=1, dag_edges='0->1')
    report = run_backtest(panel, config)
    assert report.n_weeks == 4
    mv_weights = report.weights[report.weights['book'] == 'mv'].groupby('date')['weight'].sum()
    assert mv_weights.to_numpy() == pytest.approx(np.ones(len(mv_weights)))
    assert np.all(np.isfinite(report.book_rows('mcvar', 0.05)['cvar']))


@pytest.mark.slow
def test_backtest_four_factor_desk():
    dag = Dag.from_edges(4, [(0, 1), (1, 2), (0, 3)])
    panel = simulate_panel(draw_parameters(dag, 10, seed=11), 1200, seed=12)
    config = BacktestConfig(window=250, K=5000, alphas=(0.05,), reserve_weeks=8, ws=8, strategy=2,
                            dag_edges='0->1, 1->2, 0->3')
    report = run_backtest(panel, config)
    assert report.n_weeks > 150

    costs = report.cost_table()
    mcvar = costs[costs['book'] == 'mcvar'].iloc[0]
    assert 0.01 <= mcvar['exceedances'] / mcvar['weeks'] <= 0.12

    rows = report.book_rows('mcvar', 0.05)
    gate = rows['gate'].astype(bool)
    assert 0 < gate.sum() < len(rows)
    assert rows.loc[~gate, 'cvar'].mean() > rows.loc[gate, 'cvar'].mean()
    summary = report.strategy2_summary().iloc[0]
    assert summary['weeks_invested'] == gate.sum()
    assert np.isfinite(summary['avg_excluded_return'])
