#!/usr/bin/env python3
"""Tests for likelihood assembly over the DAG and stock copulas"""
import numpy as np
import pytest

from data_model import CopulaParams, Dag, DagCopulaKey, InvalidInputError, StructuralError, dag_copula_keys
from pcc_engine import (ConditionalLattice, IncrementalDagLikelihood, dag_loglik_from_u, full_loglik,
                        marginal_pits, push_back_uniforms, stock_conditionals, stock_loglik)
from simulate import s1_model, simulate_trace
from tcopula import copula_series


@pytest.fixture(scope="module")
def trace():
    return simulate_trace(s1_model(p=3, seed=4), 80, seed=9)


@pytest.fixture(scope="module")
def model():
    return s1_model(p=3, seed=4)


def random_u(T, m, seed):
    return np.random.default_rng(seed).uniform(0.01, 0.99, size=(T, m))


def test_empty_dag_has_zero_loglik():
    u = random_u(50, 3, 0)
    result = dag_loglik_from_u(u, Dag.empty(3), {})
    assert result.loglik == 0.0
    assert np.array_equal(result.lattice.stock_inputs(), u)


def test_single_edge_matches_copula_series():
    u = random_u(60, 2, 1)
    dag = Dag.from_edges(2, [(0, 1)])
    params = CopulaParams(0.5, 0.05, 0.9, 6.0)
    result = dag_loglik_from_u(u, dag, {DagCopulaKey(1, 0, ()): params})
    logc, _, h = copula_series(u[:, 1], u[:, 0], params)
    assert result.loglik == pytest.approx(float(logc.sum()))
    assert result.lattice.conditional(1, [0]) == pytest.approx(h)


def test_missing_copula_parameters():
    with pytest.raises(InvalidInputError):
        dag_loglik_from_u(random_u(20, 2, 2), Dag.from_edges(2, [(0, 1)]), {})


def test_conditional_requires_parent_prefix():
    dag = Dag.from_edges(4, [(0, 2), (0, 3), (1, 3), (2, 3)])
    theta2 = {key: CopulaParams(0.3, 0.05, 0.9, 7.0) for key in dag_copula_keys(dag)}
    lattice = dag_loglik_from_u(random_u(40, 4, 3), dag, theta2).lattice
    assert lattice.conditional(3, [0, 1]).shape == (40,)
    # given sets that skip a parent are not reachable
    with pytest.raises(StructuralError):
        lattice.conditional(3, [1])
    with pytest.raises(StructuralError):
        lattice.conditional(3, [0, 2])


def test_lattice_shape_check():
    with pytest.raises(InvalidInputError):
        ConditionalLattice(Dag.empty(3), np.full((10, 2), 0.5))


def test_full_loglik_decomposes(trace, model):
    panel = trace.panel
    result = full_loglik(panel, model)
    assert result.total == pytest.approx(result.marginal.sum() + result.dag.loglik + result.stocks.sum())
    assert result.stocks[1] == pytest.approx(
        stock_loglik(panel, model.marginals, result.dag.lattice, model.stock_copulas[1], 1))
    assert np.isfinite(result.total)


def test_stock_loglik_index_check(trace, model):
    lattice = full_loglik(trace.panel, model).dag.lattice
    with pytest.raises(InvalidInputError):
        stock_loglik(trace.panel, model.marginals, lattice, model.stock_copulas[0], 3)


def test_stock_conditionals_level_count():
    with pytest.raises(InvalidInputError):
        stock_conditionals(np.full(10, 0.5), np.full((10, 2), 0.5), [CopulaParams(0.1, 0.0, 0.0, 5.0)])


def test_push_back_recovers_simulation_draws(trace, model):
    w_factors, w_stocks = push_back_uniforms(trace.u[:, :model.m], trace.u[:, model.m:], model)
    assert w_factors == pytest.approx(trace.innovations[:, :model.m], abs=1e-6)
    assert w_stocks == pytest.approx(trace.innovations[:, model.m:], abs=1e-6)


def test_pits_match_trace(trace, model):
    pits = marginal_pits(trace.panel, model.marginals)
    assert pits.u == pytest.approx(trace.u, abs=1e-8)


def test_incremental_matches_full_recompute():
    dag = Dag.from_edges(4, [(0, 1), (1, 2), (0, 3), (2, 3)])
    theta2 = {key: CopulaParams(0.3, 0.05, 0.9, 7.0) for key in dag_copula_keys(dag)}
    u = random_u(70, 4, 5)
    incremental = IncrementalDagLikelihood(u, dag, theta2)
    assert incremental.loglik == pytest.approx(dag_loglik_from_u(u, dag, theta2).loglik)

    change = {DagCopulaKey(1, 0, ()): CopulaParams(-0.6, 0.1, 0.8, 5.0)}
    proposed = incremental.evaluate(1, change)
    expected = dag_loglik_from_u(u, dag, {**theta2, **change}).loglik
    assert proposed == pytest.approx(expected)
    assert incremental.loglik == pytest.approx(dag_loglik_from_u(u, dag, theta2).loglik)

    incremental.commit()
    assert incremental.loglik == pytest.approx(expected)
    assert incremental.lattice.conditional(3, [0, 2]) == pytest.approx(
        dag_loglik_from_u(u, dag, {**theta2, **change}).lattice.conditional(3, [0, 2]))
