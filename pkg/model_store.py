"""
JSON persistence for fitted models and DAG copula fits.
"""
import json
import logging
from dataclasses import asdict
from typing import Dict, Optional, Tuple

import numpy as np

from data_model import CopulaParams, Dag, DagCopulaKey, FittedModel, GarchParams, InvalidInputError

logger = logging.getLogger(__name__)

MODEL_SCHEMA = 'gcgarch-model'
DAG_FIT_SCHEMA = 'gcgarch-dag-fit'
SCHEMA_VERSION = 1


def _copula_dict(params: CopulaParams) -> dict:
    return {k: float(v) for k, v in asdict(params).items()}


def _copula(entry: dict) -> CopulaParams:
    return CopulaParams(float(entry['phi_bar']), float(entry['a']), float(entry['b']), float(entry['v']))


def dag_to_dict(dag: Dag) -> dict:
    return {'m': dag.m, 'adjacency': dag.adjacency.astype(int).tolist(), 'order': list(dag.order)}


def dag_from_dict(entry: dict) -> Dag:
    return Dag(int(entry['m']), np.array(entry['adjacency'], dtype=np.int8), tuple(entry['order']))


def _keyed_copulas(theta2: Dict[DagCopulaKey, CopulaParams]) -> list:
    return [{'child': k.child, 'parent': k.parent, 'given': list(k.given), **_copula_dict(params)}
            for k, params in theta2.items()]


def _copulas_by_key(entries: list) -> Dict[DagCopulaKey, CopulaParams]:
    return {DagCopulaKey(int(e['child']), int(e['parent']), tuple(int(g) for g in e['given'])): _copula(e)
            for e in entries}


def _check_schema(document: dict, schema: str, path: str):
    if document.get('schema') != schema:
        raise InvalidInputError(f"{path} is not a {schema} document (schema={document.get('schema')!r})")
    if document.get('version') != SCHEMA_VERSION:
        raise InvalidInputError(f"{path} has unsupported {schema} version {document.get('version')!r}")


def model_to_dict(model: FittedModel) -> dict:
    symbols = model.default_symbols()
    return {
        'schema': MODEL_SCHEMA,
        'version': SCHEMA_VERSION,
        'm': model.m,
        'p': model.p,
        'm_sc': model.m_sc,
        'symbols': list(symbols),
        'marginals': [{'symbol': s, **{k: float(v) for k, v in asdict(g).items()}}
                      for s, g in zip(symbols, model.marginals)],
        'dag': dag_to_dict(model.dag),
        'dag_copulas': _keyed_copulas(model.dag_copulas),
        'stock_copulas': [[_copula_dict(c) for c in levels] for levels in model.stock_copulas],
    }


def model_from_dict(document: dict, path: str = '<model>') -> FittedModel:
    _check_schema(document, MODEL_SCHEMA, path)
    try:
        marginals = tuple(GarchParams(float(e['omega']), float(e['alpha']), float(e['beta']), float(e['v']))
                          for e in document['marginals'])
        dag = dag_from_dict(document['dag'])
        stock_copulas = [[_copula(c) for c in levels] for levels in document['stock_copulas']]
        return FittedModel(marginals, dag, _copulas_by_key(document['dag_copulas']), stock_copulas,
                           int(document.get('m_sc', 2)), tuple(document.get('symbols', ())))
    except (KeyError, TypeError) as e:
        raise InvalidInputError(f"Malformed model document {path}: missing or bad field {e}")


def save_model(model: FittedModel, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model_to_dict(model), f, indent=2)
    logger.info(f"Saved model to {path}")


def load_model(path: str) -> FittedModel:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"{path} is not valid JSON: {e}")
    return model_from_dict(document, path)


def save_dag_fit(path: str, dag: Dag, theta2: Dict[DagCopulaKey, CopulaParams], loglik: float,
                 method: str = 'sequential', symbols: Tuple[str, ...] = (), posterior=None,
                 marginals: Optional[Tuple[GarchParams, ...]] = None):
    """
    DAG copula estimates with their log-likelihood. With a posterior the
    medians, means and 90% intervals are stored next to the point estimate.
    """
    document = {
        'schema': DAG_FIT_SCHEMA,
        'version': SCHEMA_VERSION,
        'method': method,
        'symbols': list(symbols),
        'dag': dag_to_dict(dag),
        'loglik': float(loglik),
        'copulas': _keyed_copulas(theta2),
    }
    if marginals is not None:
        document['marginals'] = [{k: float(v) for k, v in asdict(g).items()} for g in marginals]
    if posterior is not None:
        document['posterior'] = {
            'medians': _keyed_copulas(posterior.medians),
            'means': _keyed_copulas(posterior.means),
            'intervals': [{'child': k.child, 'parent': k.parent, 'given': list(k.given),
                           'low': _copula_dict(low), 'high': _copula_dict(high)}
                          for k, (low, high) in posterior.intervals.items()],
            'iterations': int(posterior.chain.N),
            'burn_in': int(posterior.chain.burn_in),
            'acceptance_rate': posterior.chain.acceptance_rate(),
            'geweke_z': posterior.geweke.z if posterior.geweke else None,
            'geweke_p': posterior.geweke.p_value if posterior.geweke else None,
        }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2)


def load_dag_fit(path: str) -> Tuple[Dag, Dict[DagCopulaKey, CopulaParams], dict]:
    """(dag, point estimates, full document)"""
    with open(path, 'r', encoding='utf-8') as f:
        document = json.load(f)
    _check_schema(document, DAG_FIT_SCHEMA, path)
    return dag_from_dict(document['dag']), _copulas_by_key(document['copulas']), document
