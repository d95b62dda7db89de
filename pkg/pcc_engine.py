"""
Likelihood assembly for the GC-GARCH model.

The computation runs in the order the model is built:
    1. marginal PITs u_i,t = F(r_i,t) from the GARCH filters
    2. DAG copulas node by node in topological order; every copula's
       h-function output extends the node's chain of conditional CDFs
       F(i), F(i | i[1]), ..., F(i | pa(i))
    3. stock copulas level by level against F(order[l] | pa(order[l]))
The per-node chains form the ConditionalLattice, which is shared read-only
by every stock evaluation.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from data_model import (CopulaParams, Dag, DagCopulaKey, FittedModel, GarchParams, GcGarchError,
                        InvalidInputError, ReturnPanel, StructuralError)
from marginal_garch import garch_filter, marginal_cdf, std_t_logpdf
from tcopula import DEFAULT_M_SC, copula_series

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300
LOG_FLOOR = float(np.log(DENSITY_FLOOR))


def floor_logc(logc: np.ndarray) -> Tuple[np.ndarray, int]:
    low = ~(logc >= LOG_FLOOR)
    count = int(np.count_nonzero(low))
    if count:
        logc = np.where(low, LOG_FLOOR, logc)
    return logc, count


@dataclass(frozen=True)
class MarginalPits:
    """Filtered variances, PITs and per-series log-likelihoods (T x n, T x n, n)"""
    sigma2: np.ndarray
    u: np.ndarray
    loglik: np.ndarray


def marginal_pits(panel: ReturnPanel, marginals: Sequence[GarchParams]) -> MarginalPits:
    n = panel.values.shape[1]
    if len(marginals) < n:
        raise InvalidInputError(f"{len(marginals)} marginal parameter sets for {n} series")
    sigma2 = np.empty_like(panel.values)
    u = np.empty_like(panel.values)
    loglik = np.empty(n)
    for col in range(n):
        params = marginals[col]
        returns = panel.values[:, col]
        sigma2[:, col] = garch_filter(params, returns)
        u[:, col] = marginal_cdf(returns, sigma2[:, col], params.v)
        loglik[col] = float(np.sum(std_t_logpdf(returns, sigma2[:, col], params.v)))
    return MarginalPits(sigma2, u, loglik)


def resolve_conditional(dag: Dag, chains: Dict[int, list], node: int, given: Sequence[int]):
    """
    F(node | given) from per-node chains [F(i), F(i | i[1]), ...].

    Only the parents of node inside given matter; they have to form a
    leading run of node's sorted parent list.
    """
    parents = dag.parents(node)
    given = set(given)
    relevant = tuple(x for x in parents if x in given)
    k = len(relevant)
    if relevant != parents[:k]:
        raise StructuralError(
            f"F({node} | {sorted(given)}) needs parents {relevant}, not a prefix of {parents}")
    chain = chains[node]
    if k >= len(chain):
        raise StructuralError(f"F({node} | {parents[:k]}) has not been computed yet")
    return chain[k]


@dataclass
class ConditionalLattice:
    """
    Per-day conditional CDFs of the risk factors.

    chains[i][k] holds F(i | i[1..k]) as a length-T series, where i[1..k] are
    the first k parents of i in topological order. phi_paths and logc are
    filled per DAG copula as the lattice is extended.
    """
    dag: Dag
    marginal_u: np.ndarray
    m_sc: int = DEFAULT_M_SC
    chains: Dict[int, List[np.ndarray]] = field(default_factory=dict)
    phi_paths: Dict[DagCopulaKey, np.ndarray] = field(default_factory=dict)
    logc: Dict[DagCopulaKey, np.ndarray] = field(default_factory=dict)
    floored: int = 0

    def __post_init__(self):
        if self.marginal_u.ndim != 2 or self.marginal_u.shape[1] != self.dag.m:
            raise InvalidInputError(f"Factor PITs must be T x {self.dag.m}")
        if not self.chains:
            self.chains = {i: [self.marginal_u[:, i]] for i in range(self.dag.m)}

    @property
    def T(self) -> int:
        return self.marginal_u.shape[0]

    def conditional(self, node: int, given: Sequence[int]) -> np.ndarray:
        return resolve_conditional(self.dag, self.chains, node, given)

    def copula_inputs(self, key: DagCopulaKey) -> Tuple[np.ndarray, np.ndarray]:
        """(F(child | given), F(parent | given)) for the copula key"""
        chain = self.chains[key.child]
        if len(chain) <= len(key.given):
            raise StructuralError(f"Copula {key.label()} requested before its lower levels")
        return chain[len(key.given)], self.conditional(key.parent, key.given)

    def extend(self, key: DagCopulaKey, params: CopulaParams) -> float:
        """Evaluate one DAG copula, store its outputs and return its log-likelihood"""
        chain = self.chains[key.child]
        if len(chain) != len(key.given) + 1:
            raise StructuralError(f"Copula {key.label()} evaluated out of order")
        u_x, u_y = self.copula_inputs(key)
        logc, phi, h = copula_series(u_x, u_y, params, self.m_sc)
        logc, count = floor_logc(logc)
        self.floored += count
        chain.append(h)
        self.phi_paths[key] = phi
        self.logc[key] = logc
        return float(np.sum(logc))

    def reset_node(self, node: int):
        self.chains[node] = [self.marginal_u[:, node]]
        for key in [k for k in self.logc if k.child == node]:
            del self.logc[key]
            self.phi_paths.pop(key, None)

    def stock_inputs(self) -> np.ndarray:
        """T x m matrix whose column l is F(order[l] | pa(order[l]))"""
        return np.column_stack([self.chains[node][-1] for node in self.dag.order])


@dataclass
class DagLikelihood:
    loglik: float
    per_copula: Dict[DagCopulaKey, float]
    per_node: Dict[int, float]
    lattice: ConditionalLattice
    floored: int = 0


def node_copula_keys(dag: Dag, node: int) -> List[DagCopulaKey]:
    parents = dag.parents(node)
    return [DagCopulaKey(node, parent, parents[:k]) for k, parent in enumerate(parents)]


def dag_loglik_from_u(u_factors: np.ndarray, dag: Dag, theta2: Dict[DagCopulaKey, CopulaParams],
                      m_sc: int = DEFAULT_M_SC) -> DagLikelihood:
    """DAG copula log-likelihood from factor PITs (T x m)"""
    lattice = ConditionalLattice(dag, np.asarray(u_factors, dtype=float), m_sc)
    per_copula = {}
    per_node = {}
    for node in dag.order:
        total = 0.0
        for key in node_copula_keys(dag, node):
            if key not in theta2:
                raise InvalidInputError(f"No parameters for copula {key.label()}")
            per_copula[key] = lattice.extend(key, theta2[key])
            total += per_copula[key]
        per_node[node] = total
    if lattice.floored:
        logger.info(f"{lattice.floored} copula densities floored at {DENSITY_FLOOR:g}")
    return DagLikelihood(float(sum(per_node.values())), per_copula, per_node, lattice, lattice.floored)


def dag_loglik(panel: ReturnPanel, marginals: Sequence[GarchParams], dag: Dag,
               theta2: Dict[DagCopulaKey, CopulaParams], m_sc: int = DEFAULT_M_SC,
               pits: Optional[MarginalPits] = None) -> DagLikelihood:
    """
    l2: sum over DAG copulas and days of log c, with dynamic correlations.

    Args:
        panel: return panel; only the first m columns are read
        marginals: GARCH parameters for at least the m factors
        dag: factor DAG in the reduced space
        theta2: parameters for every key of dag_copula_keys(dag)
        pits: precomputed marginal PITs, skips the GARCH filters

    Returns:
        DagLikelihood with the lattice the stock copulas condition on
    """
    if dag.m != panel.m:
        raise InvalidInputError(f"DAG has {dag.m} nodes but the panel has {panel.m} risk factors")
    if pits is None:
        pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
    return dag_loglik_from_u(pits.u[:, :panel.m], dag, theta2, m_sc)


@dataclass(frozen=True)
class StockChain:
    """Per-level outputs for one stock: log c (T x m), phi paths ((T+1) x m), F(j | 1..l) chain"""
    logc: np.ndarray
    phi: np.ndarray
    chain: Tuple[np.ndarray, ...]
    floored: int = 0

    @property
    def loglik(self) -> float:
        return float(self.logc.sum())


def stock_conditionals(u_stock: np.ndarray, factor_inputs: np.ndarray, theta3_j: Sequence[CopulaParams],
                       m_sc: int = DEFAULT_M_SC) -> StockChain:
    """Run the m stock copulas of one stock, level l conditioning on factor levels 0..l-1"""
    m = factor_inputs.shape[1]
    if len(theta3_j) != m:
        raise InvalidInputError(f"Need {m} stock copulas, got {len(theta3_j)}")
    chain = [np.asarray(u_stock, dtype=float)]
    logc = np.empty((factor_inputs.shape[0], m))
    phi = np.empty((factor_inputs.shape[0] + 1, m))
    floored = 0
    for level, params in enumerate(theta3_j):
        level_logc, phi[:, level], h = copula_series(chain[-1], factor_inputs[:, level], params, m_sc)
        logc[:, level], count = floor_logc(level_logc)
        floored += count
        chain.append(h)
    return StockChain(logc, phi, tuple(chain), floored)


def stock_loglik(panel: ReturnPanel, marginals: Sequence[GarchParams], lattice: ConditionalLattice,
                 theta3_j: Sequence[CopulaParams], j: int, m_sc: Optional[int] = None) -> float:
    """l3j for stock j (0-based among the stocks)"""
    if not 0 <= j < panel.p:
        raise InvalidInputError(f"Stock index {j} outside 0..{panel.p - 1}")
    col = panel.m + j
    params = marginals[col]
    returns = panel.values[:, col]
    u_stock = marginal_cdf(returns, garch_filter(params, returns), params.v)
    m_sc = lattice.m_sc if m_sc is None else m_sc
    return stock_conditionals(u_stock, lattice.stock_inputs(), theta3_j, m_sc).loglik


@dataclass
class LoglikDecomposition:
    marginal: np.ndarray
    dag: DagLikelihood
    stocks: np.ndarray

    @property
    def total(self) -> float:
        return float(self.marginal.sum() + self.dag.loglik + self.stocks.sum())


def full_loglik(panel: ReturnPanel, model: FittedModel) -> LoglikDecomposition:
    """Total log-likelihood as sum(l1i) + l2 + sum(l3j)"""
    if panel.m != model.m or panel.p != model.p:
        raise InvalidInputError(
            f"Panel has {panel.m} factors and {panel.p} stocks, model expects {model.m} and {model.p}")
    pits = marginal_pits(panel, model.marginals)
    dag = dag_loglik_from_u(pits.u[:, :model.m], model.dag, model.dag_copulas, model.m_sc)
    factor_inputs = dag.lattice.stock_inputs()
    stocks = np.array([
        stock_conditionals(pits.u[:, model.m + j], factor_inputs, model.stock_copulas[j], model.m_sc).loglik
        for j in range(model.p)
    ])
    return LoglikDecomposition(pits.loglik, dag, stocks)


def push_back_uniforms(u_factors: np.ndarray, u_stocks: np.ndarray,
                       model: FittedModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Map marginal PITs to the independent uniforms a simulation draws:
    F(i | pa(i)) for each factor and F(j | all factors) for each stock.
    """
    lattice = dag_loglik_from_u(u_factors, model.dag, model.dag_copulas, model.m_sc).lattice
    w_factors = np.column_stack([lattice.chains[i][-1] for i in range(model.m)])
    factor_inputs = lattice.stock_inputs()
    u_stocks = np.asarray(u_stocks, dtype=float).reshape(u_factors.shape[0], -1)
    w_stocks = np.empty_like(u_stocks)
    for j in range(u_stocks.shape[1]):
        w_stocks[:, j] = stock_conditionals(u_stocks[:, j], factor_inputs, model.stock_copulas[j],
                                            model.m_sc).chain[-1]
    return w_factors, w_stocks


class IncrementalDagLikelihood:
    """
    l2 under repeated single-node parameter changes.

    Changing the copulas of one node only invalidates that node's chain and
    those of its descendants; everything else is reused.
    """

    def __init__(self, u_factors: np.ndarray, dag: Dag, theta2: Dict[DagCopulaKey, CopulaParams],
                 m_sc: int = DEFAULT_M_SC):
        self.dag = dag
        self.m_sc = m_sc
        result = dag_loglik_from_u(u_factors, dag, theta2, m_sc)
        self.lattice = result.lattice
        self.theta2 = dict(theta2)
        self.per_node = dict(result.per_node)
        self._descendants = {i: self._collect_descendants(i) for i in range(dag.m)}
        self._pending = None

    def _collect_descendants(self, node: int) -> Tuple[int, ...]:
        found = set()
        stack = list(self.dag.children(node))
        while stack:
            current = stack.pop()
            if current not in found:
                found.add(current)
                stack.extend(self.dag.children(current))
        return tuple(sorted(found, key=self.dag.position))

    @property
    def loglik(self) -> float:
        return float(sum(self.per_node.values()))

    def _recompute(self, node: int, theta2) -> float:
        self.lattice.reset_node(node)
        return float(sum(self.lattice.extend(key, theta2[key]) for key in node_copula_keys(self.dag, node)))

    def evaluate(self, node: int, params: Dict[DagCopulaKey, CopulaParams]) -> float:
        """l2 with node's copulas replaced by params, without committing"""
        saved_chains = {i: self.lattice.chains[i] for i in (node,) + self._descendants[node]}
        saved_logc = dict(self.lattice.logc)
        saved_phi = dict(self.lattice.phi_paths)
        theta2 = {**self.theta2, **params}
        per_node = dict(self.per_node)
        for i in (node,) + self._descendants[node]:
            per_node[i] = self._recompute(i, theta2)
        self._pending = (theta2, per_node, {i: self.lattice.chains[i] for i in saved_chains},
                         dict(self.lattice.logc), dict(self.lattice.phi_paths))
        self.lattice.chains.update(saved_chains)
        self.lattice.logc = saved_logc
        self.lattice.phi_paths = saved_phi
        return float(sum(per_node.values()))

    def commit(self):
        """Keep the state of the last evaluate call"""
        if self._pending is None:
            raise GcGarchError("commit called without a pending evaluate")
        theta2, per_node, chains, logc, phi = self._pending
        self.theta2 = theta2
        self.per_node = per_node
        self.lattice.chains.update(chains)
        self.lattice.logc = logc
        self.lattice.phi_paths = phi
        self._pending = None
