#!/usr/bin/env python3
"""Tests for the reduced graph space, BIC scoring, structure MCMC, CPDAGs and edge metrics"""
import numpy as np
import pandas as pd
import pytest

from data_model import CopulaParams, Dag, DagCopulaKey, InvalidInputError
from simulate import draw_parameters, simulate_panel
from structure_learning import (Cpdag, ScoredGraph, auroc, bic_score, chain_diagnostics, classification_metrics,
                                confusion_rates, cpdag, cumulative_parent_test, edge_features, graph_distance,
                                in_reduced_space, neighborhood, read_graph_log_csv, reduced_space_violations,
                                score_from_fit, structure_mcmc, top_graphs, write_edge_features_csv,
                                write_graph_log_csv)

EASY = Dag.from_edges(5, [(0, 1), (0, 3), (2, 3), (0, 4), (2, 4), (3, 4)])
DIFFICULT = Dag.from_edges(5, [(0, 4), (1, 3), (2, 3), (2, 4), (3, 4)])
COLLIDER_DAG = Dag.from_edges(4, [(0, 2), (0, 3), (1, 3), (2, 3)])
CHORDAL_DAG = Dag.from_edges(4, [(0, 1), (0, 2), (1, 2), (2, 3)])


def complete_dag(m):
    return Dag.from_edges(m, [(i, j) for i in range(m) for j in range(i + 1, m)])


def test_easy_graph_is_in_reduced_space():
    assert in_reduced_space(EASY)
    assert reduced_space_violations(EASY) == []


def test_difficult_graph_fails_at_last_node():
    assert not in_reduced_space(DIFFICULT)
    assert (4, 3) in reduced_space_violations(DIFFICULT)
    assert cumulative_parent_test(DIFFICULT, 4, 2)
    assert not cumulative_parent_test(DIFFICULT, 4, 3)


def test_empty_and_complete_graphs_pass():
    assert in_reduced_space(Dag.empty(4))
    assert in_reduced_space(complete_dag(5))


def test_parent_test_range():
    with pytest.raises(InvalidInputError):
        cumulative_parent_test(EASY, 4, 0)
    with pytest.raises(InvalidInputError):
        cumulative_parent_test(EASY, 4, 4)


def test_neighborhood_of_empty_graph():
    assert len(neighborhood(Dag.empty(3))) == 6


def test_neighborhood_is_symmetric():
    for dag in (COLLIDER_DAG, EASY, Dag.from_edges(3, [(0, 1)])):
        for other in neighborhood(dag):
            assert graph_distance(other, dag) == 1
            assert in_reduced_space(other)
            assert any(back.key == dag.key for back in neighborhood(other))


def test_neighborhood_skips_reversals_and_cycles():
    chain = Dag.from_edges(3, [(0, 1), (1, 2)])
    keys = {g.key for g in neighborhood(chain)}
    assert len(keys) == 3
    assert Dag.from_edges(3, [(0, 1), (1, 2), (0, 2)]).key in keys


def test_score_from_fit_penalty():
    dag = Dag.from_edges(3, [(0, 1), (1, 2)])
    assert score_from_fit(dag, 100.0, 1000) == pytest.approx(100.0 - 4.0 * np.log(1000))
    assert ScoredGraph(dag, 0.0).n_params == 8


@pytest.fixture(scope="module")
def two_factor_panel():
    dag = Dag.from_edges(2, [(0, 1)])
    model = draw_parameters(dag, 1, seed=3, dag_copulas={DagCopulaKey(1, 0, ()): CopulaParams(0.7, 0.05, 0.9, 6.0)})
    return model, simulate_panel(model, 500, seed=4)


def test_bic_of_empty_graph_is_zero(two_factor_panel):
    model, panel = two_factor_panel
    assert bic_score(panel, model.marginals, Dag.empty(2)).bic == 0.0


def test_bic_prefers_true_edge(two_factor_panel):
    model, panel = two_factor_panel
    scored = bic_score(panel, model.marginals, model.dag)
    assert scored.bic > 0.0
    assert scored.loglik > scored.bic
    assert set(scored.theta2_tilde) == {DagCopulaKey(1, 0, ())}


def test_bic_rejects_graph_outside_space():
    with pytest.raises(InvalidInputError):
        bic_score(None, None, DIFFICULT)


def test_structure_mcmc_on_data(two_factor_panel):
    model, panel = two_factor_panel
    chain = structure_mcmc(panel, model.marginals, n_iter=30, seed=5)
    assert chain.N == 30
    assert len(chain.scores) == 31
    assert chain.graphs[0].n_edges == 0
    assert chain.neighborhood_sizes[0] == 2
    assert edge_features(chain.graphs[10:]).sum() == pytest.approx(1.0)


def test_structure_mcmc_stationary_distribution():
    weight = 0.7
    chain = structure_mcmc(None, None, n_iter=20000, seed=6, m=3, score=lambda g: weight * g.n_edges)
    # labelled DAGs on 3 nodes by edge count: 1, 6, 12, 6
    counts = np.array([1, 6, 12, 6])
    expected = counts * np.exp(weight * np.arange(4))
    expected /= expected.sum()
    edges = np.array([g.n_edges for g in chain.graphs[1000:]])
    observed = np.bincount(edges, minlength=4) / edges.size
    assert observed == pytest.approx(expected, abs=0.03)
    assert 0 < chain.acceptance_rate() < 1


def test_structure_mcmc_rejects_start_outside_space():
    with pytest.raises(InvalidInputError):
        structure_mcmc(None, None, init=DIFFICULT, n_iter=5, score=lambda g: 0.0)


def test_structure_mcmc_single_node_stays_put():
    chain = structure_mcmc(None, None, init=Dag.empty(1), n_iter=5, score=lambda g: 0.0)
    assert chain.N == 5
    assert all(g.n_edges == 0 for g in chain.graphs)
    assert chain.neighborhood_sizes.tolist() == [0] * 5
    assert chain.scores.tolist() == [0.0] * 6
    assert not chain.accepted.any()


def test_edge_features_and_distance():
    a = Dag.from_edges(3, [(0, 1)])
    b = Dag.from_edges(3, [(0, 1), (1, 2)])
    c = Dag.from_edges(3, [(1, 0)])
    features = edge_features([a, a, b, c])
    assert features[0, 1] == pytest.approx(0.75)
    assert features[1, 2] == pytest.approx(0.25)
    assert graph_distance(a, a) == 0
    assert graph_distance(b, a) == 1
    assert graph_distance(c, a) == 2
    with pytest.raises(InvalidInputError):
        edge_features([])
    with pytest.raises(InvalidInputError):
        graph_distance(a, Dag.empty(4))


def test_top_graphs_and_graph_log(tmp_path):
    chain = structure_mcmc(None, None, n_iter=200, seed=7, m=3, score=lambda g: -float(g.n_edges))
    best = top_graphs(chain, 3)
    assert best[0].dag.n_edges == 0
    assert [g.bic for g in best] == sorted((g.bic for g in best), reverse=True)
    assert len({g.dag.key for g in best}) == len(best)

    path = str(tmp_path / 'graphs.csv')
    write_graph_log_csv(chain, path)
    loaded = read_graph_log_csv(path, 3)
    assert [g.key for g in loaded.graphs] == [g.key for g in chain.graphs]
    assert loaded.scores == pytest.approx(chain.scores)


def test_chain_diagnostics_uses_distance():
    chain = structure_mcmc(None, None, n_iter=400, seed=8, m=3, score=lambda g: 0.5 * g.n_edges)
    result = chain_diagnostics(chain, Dag.empty(3))
    assert 0 <= result.burn_in <= 200
    assert 0 <= result.p_value <= 1


def test_cpdag_single_edge_is_undirected():
    truth = cpdag(Dag.from_edges(2, [(0, 1)]))
    assert truth.undirected_edges() == [(0, 1)]
    assert truth.directed_edges() == []
    assert truth == cpdag(Dag.from_edges(2, [(1, 0)]))


def test_cpdag_keeps_collider():
    truth = cpdag(Dag.from_edges(3, [(0, 2), (1, 2)]))
    assert sorted(truth.directed_edges()) == [(0, 2), (1, 2)]
    assert truth.undirected_edges() == []
    assert truth.marks()[0, 2] == Cpdag.DIRECTED


def test_cpdag_meek_rule_one():
    truth = cpdag(Dag.from_edges(4, [(0, 2), (1, 2), (2, 3)]))
    assert sorted(truth.directed_edges()) == [(0, 2), (1, 2), (2, 3)]


def test_cpdag_separates_equivalence_classes():
    a, b = cpdag(COLLIDER_DAG), cpdag(CHORDAL_DAG)
    assert sorted(a.directed_edges()) == [(0, 3), (1, 3), (2, 3)]
    assert a.undirected_edges() == [(0, 2)]
    assert a.marks()[2, 0] == Cpdag.UNDIRECTED
    assert len(b.undirected_edges()) == 4
    assert a != b
    assert np.array_equal(a.skeleton(), a.skeleton().T)


def test_confusion_rates_example():
    rates = confusion_rates(5, 1, 2, 12)
    assert rates['ACC'] == pytest.approx(0.85)
    assert rates['FDR'] == pytest.approx(1 / 6)
    assert rates['FOR'] == pytest.approx(1 / 7)
    assert rates['SEN'] == pytest.approx(5 / 7)
    assert rates['SPE'] == pytest.approx(12 / 13)
    assert confusion_rates(0, 0, 3, 4)['FDR'] is None


def test_classification_metrics_perfect_features():
    truth = cpdag(COLLIDER_DAG)
    features = np.zeros((4, 4))
    for i, j in truth.directed_edges():
        features[i, j] = 1.0
    features[0, 2] = 0.8
    report = classification_metrics(features, truth, (0.5,))
    row = report.rows[0]
    assert (row.tp, row.fp, row.fn, row.tn) == (4, 0, 0, 7)
    assert report.auroc == pytest.approx(1.0)
    frame = report.to_frame()
    assert frame['FDR'].iloc[0] == 0.0
    assert frame['ACC'].dtype == float


def test_auroc_edge_cases():
    labels = np.array([True, False, True, False])
    assert auroc(np.full(4, 0.5), labels) == pytest.approx(0.5)
    assert auroc(np.array([0.9, 0.1, 0.8, 0.2]), labels) == pytest.approx(1.0)
    assert auroc(np.array([0.1, 0.9, 0.2, 0.8]), labels) == pytest.approx(0.0)
    assert auroc(np.ones(3), np.ones(3, dtype=bool)) is None


def test_classification_metrics_shape_check():
    with pytest.raises(InvalidInputError):
        classification_metrics(np.zeros((3, 3)), cpdag(COLLIDER_DAG))


def test_write_edge_features_csv(tmp_path):
    path = tmp_path / 'features.csv'
    write_edge_features_csv(np.array([[0.0, 0.5], [0.25, 0.0]]), str(path), ['A', 'B'])
    frame = pd.read_csv(path, index_col='from')
    assert frame.loc['A', 'B'] == 0.5
    assert frame.loc['B', 'A'] == 0.25
