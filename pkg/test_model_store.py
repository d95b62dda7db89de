#!/usr/bin/env python3
"""Tests for JSON persistence of fitted models and DAG fits"""
import json

import pytest

from data_model import Dag, InvalidInputError
from model_store import (MODEL_SCHEMA, dag_from_dict, dag_to_dict, load_dag_fit, load_model, model_from_dict,
                         model_to_dict, save_dag_fit, save_model)
from simulate import s1_model


def test_saved_model_loads_identically(tmp_path):
    model = s1_model(p=3, seed=5)
    path = str(tmp_path / 'model.json')
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.dag == model.dag
    assert loaded.marginals == model.marginals
    assert loaded.dag_copulas == model.dag_copulas
    assert loaded.stock_copulas == model.stock_copulas
    assert loaded.symbols == model.default_symbols()


def test_document_layout():
    document = model_to_dict(s1_model(p=1))
    assert document['schema'] == MODEL_SCHEMA
    assert document['m'] == 8 and document['p'] == 1
    assert document['marginals'][0]['symbol'] == 'F0'
    assert {'child', 'parent', 'given', 'phi_bar'} <= set(document['dag_copulas'][0])


def test_rejects_wrong_schema_and_version():
    document = model_to_dict(s1_model(p=1))
    with pytest.raises(InvalidInputError):
        model_from_dict({**document, 'schema': 'other'})
    with pytest.raises(InvalidInputError):
        model_from_dict({**document, 'version': 99})
    broken = dict(document)
    del broken['marginals']
    with pytest.raises(InvalidInputError):
        model_from_dict(broken)


def test_rejects_invalid_json(tmp_path):
    path = tmp_path / 'model.json'
    path.write_text('{not json')
    with pytest.raises(InvalidInputError):
        load_model(str(path))


def test_dag_fit_file(tmp_path):
    model = s1_model(p=1)
    path = str(tmp_path / 'dag_fit.json')
    save_dag_fit(path, model.dag, model.dag_copulas, -12.5, symbols=('a', 'b'), marginals=model.marginals[:8])
    dag, theta2, document = load_dag_fit(path)
    assert dag == model.dag
    assert theta2 == model.dag_copulas
    assert document['loglik'] == -12.5
    assert document['method'] == 'sequential'
    assert len(document['marginals']) == 8
    assert 'posterior' not in document

    (tmp_path / 'model.json').write_text(json.dumps(model_to_dict(model)))
    with pytest.raises(InvalidInputError):
        load_dag_fit(str(tmp_path / 'model.json'))


def test_dag_dict_keeps_order():
    dag = Dag.from_edges(3, [(2, 0)], order=(1, 2, 0))
    assert dag_from_dict(dag_to_dict(dag)).order == (1, 2, 0)
