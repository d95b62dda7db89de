"""
Copula estimation: sequential maximum likelihood for single copulas and
whole DAGs, robust adaptive Metropolis (RAM) sampling of the DAG copula
parameters under a flat prior, Geweke burn-in selection, and stock copula
fits.

The three-stage pipeline (marginals, DAG copulas, stock copulas) is wrapped
by estimate_model.
"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.special import expit, logit, ndtri
from scipy.stats import norm

from data_model import (CopulaParams, Dag, DagCopulaKey, DegenerateDataError, FittedModel, GarchParams,
                        InvalidInputError, ReturnPanel, dag_copula_keys, validate_copula_params)
from marginal_garch import GarchFit, fit_garch
from pcc_engine import (ConditionalLattice, IncrementalDagLikelihood, dag_loglik_from_u, floor_logc,
                        marginal_pits, node_copula_keys)
from tcopula import DEFAULT_M_SC, copula_series

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 50
V_MAX = 100.0
PHI_BAR_MAX = 1.0 - 1e-6
PERSISTENCE_MAX = 1.0 - 1e-6
PARAM_NAMES = ('phi_bar', 'a', 'b', 'v')
# Initial RAM scale per copula block, in parameter units
PROPOSAL_SCALE = (0.05, 0.02, 0.02, 0.5)


@dataclass(frozen=True)
class CopulaFit:
    params: CopulaParams
    loglik: float
    converged: bool
    message: str = ''


def copula_loglik(u_x: np.ndarray, u_y: np.ndarray, params: CopulaParams, m_sc: int = DEFAULT_M_SC) -> float:
    logc, _, _ = copula_series(u_x, u_y, params, m_sc)
    return float(np.sum(floor_logc(logc)[0]))


def _to_copula(x: np.ndarray) -> CopulaParams:
    persistence = PERSISTENCE_MAX * expit(x[1])
    a = persistence * expit(x[2])
    return CopulaParams(phi_bar=float(PHI_BAR_MAX * np.tanh(x[0])), a=float(a), b=float(persistence - a),
                        v=float(2.0 + (V_MAX - 2.0) * expit(x[3])))


def _from_copula(params: CopulaParams) -> np.ndarray:
    phi = np.clip(params.phi_bar / PHI_BAR_MAX, -1 + 1e-9, 1 - 1e-9)
    persistence = min(max(params.a + params.b, 1e-6), PERSISTENCE_MAX * (1 - 1e-9))
    share = min(max(params.a / persistence, 1e-6), 1 - 1e-6)
    v_share = min(max((params.v - 2.0) / (V_MAX - 2.0), 1e-6), 1 - 1e-6)
    return np.array([np.arctanh(phi), logit(persistence / PERSISTENCE_MAX), logit(share), logit(v_share)])


def _default_init(u_x: np.ndarray, u_y: np.ndarray) -> CopulaParams:
    z_x = ndtri(np.clip(u_x, 1e-6, 1 - 1e-6))
    z_y = ndtri(np.clip(u_y, 1e-6, 1 - 1e-6))
    rho = float(np.corrcoef(z_x, z_y)[0, 1]) if np.std(z_x) > 0 and np.std(z_y) > 0 else 0.0
    return CopulaParams(phi_bar=float(np.clip(rho, -0.95, 0.95)), a=0.05, b=0.85, v=8.0)


def sequential_fit_copula(u_x: Sequence[float], u_y: Sequence[float], init: Optional[CopulaParams] = None,
                          m_sc: int = DEFAULT_M_SC) -> CopulaFit:
    """
    Maximum likelihood for one dynamic t copula.

    Args:
        u_x, u_y: conditional CDF series in (0, 1), at least 50 days
        init: starting point; defaults to the normal-scores correlation with
              a=0.05, b=0.85, v=8

    Returns:
        CopulaFit; never worse than init
    """
    u_x = np.asarray(u_x, dtype=float)
    u_y = np.asarray(u_y, dtype=float)
    if u_x.shape != u_y.shape or u_x.ndim != 1:
        raise InvalidInputError("Copula series must be 1-D and of equal length")
    if u_x.size < MIN_OBSERVATIONS:
        raise InvalidInputError(f"Need at least {MIN_OBSERVATIONS} observations, got {u_x.size}")
    if np.any((u_x <= 0) | (u_x >= 1) | (u_y <= 0) | (u_y >= 1)):
        raise InvalidInputError("Copula series must lie in (0, 1)")
    if init is None or validate_copula_params(init) or init.v > V_MAX:
        init = _default_init(u_x, u_y)

    def objective(x):
        value = -copula_loglik(u_x, u_y, _to_copula(x), m_sc)
        return value if np.isfinite(value) else 1e12

    x0 = _from_copula(init)
    start = objective(x0)
    result = minimize(objective, x0, method='L-BFGS-B')
    converged = bool(result.success)
    if not converged:
        logger.warning(f"Copula fit did not converge: {result.message}")
    if result.fun <= start:
        params = _to_copula(result.x)
    else:
        params = _to_copula(x0)
    return CopulaFit(params, copula_loglik(u_x, u_y, params, m_sc), converged, str(result.message))


@dataclass
class DagFit:
    theta2: Dict[DagCopulaKey, CopulaParams]
    loglik: float
    fits: Dict[DagCopulaKey, CopulaFit] = field(default_factory=dict)
    fit_order: List[DagCopulaKey] = field(default_factory=list)
    lattice: Optional[ConditionalLattice] = None


@dataclass
class _NodeFit:
    fits: List[Tuple[DagCopulaKey, CopulaFit]]
    chain: List[np.ndarray]
    loglik: float


class SequentialDagFitter:
    """
    Sequential DAG copula fits on one fixed set of factor PITs.

    A node's fit depends only on the parent structure of the node and its
    ancestors, so fits are cached under that key and reused across graphs.
    The cache can be shared between threads.
    """

    def __init__(self, u_factors: np.ndarray, m_sc: int = DEFAULT_M_SC,
                 warm_start: Optional[Dict[DagCopulaKey, CopulaParams]] = None):
        self.u_factors = np.asarray(u_factors, dtype=float)
        self.m_sc = m_sc
        self.warm_start = dict(warm_start or {})
        self._cache: Dict[tuple, _NodeFit] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def node_key(dag: Dag, node: int) -> tuple:
        members = sorted(dag.ancestors(node) + (node,))
        return (node,) + tuple((x, dag.parents(x)) for x in members)

    def fit_node(self, lattice: ConditionalLattice, node: int) -> _NodeFit:
        dag = lattice.dag
        key = self.node_key(dag, node)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
        if cached is not None:
            lattice.chains[node] = list(cached.chain)
            return cached

        fits = []
        for copula in node_copula_keys(dag, node):
            u_x, u_y = lattice.copula_inputs(copula)
            fit = sequential_fit_copula(u_x, u_y, self.warm_start.get(copula), self.m_sc)
            lattice.extend(copula, fit.params)
            fits.append((copula, fit))
        result = _NodeFit(fits, list(lattice.chains[node]), float(sum(f.loglik for _, f in fits)))
        with self._lock:
            self._cache.setdefault(key, result)
            self.misses += 1
        return result

    def fit(self, dag: Dag) -> DagFit:
        if dag.m != self.u_factors.shape[1]:
            raise InvalidInputError(f"DAG has {dag.m} nodes, data has {self.u_factors.shape[1]} factors")
        lattice = ConditionalLattice(dag, self.u_factors, self.m_sc)
        result = DagFit({}, 0.0, lattice=lattice)
        for node in dag.order:
            node_fit = self.fit_node(lattice, node)
            for copula, fit in node_fit.fits:
                result.theta2[copula] = fit.params
                result.fits[copula] = fit
                result.fit_order.append(copula)
            result.loglik += node_fit.loglik
        return result

    def node_loglik(self, dag: Dag, node: int) -> Optional[float]:
        """Cached l2 contribution of node under dag, None if not fitted yet"""
        with self._lock:
            cached = self._cache.get(self.node_key(dag, node))
        return None if cached is None else cached.loglik


def fit_dag_sequential(panel: ReturnPanel, marginals: Sequence[GarchParams], dag: Dag,
                       m_sc: int = DEFAULT_M_SC,
                       warm_start: Optional[Dict[DagCopulaKey, CopulaParams]] = None) -> DagFit:
    """Fit the DAG copulas node by node in topological order, lower levels first"""
    pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
    return SequentialDagFitter(pits.u, m_sc, warm_start).fit(dag)


@dataclass(frozen=True)
class RamCheckpoint:
    """Everything needed to continue a RAM chain exactly"""
    theta: np.ndarray
    log_post: float
    S: np.ndarray
    iteration: int
    rng_state: dict


@dataclass
class McmcChain:
    samples: np.ndarray
    accepted: np.ndarray
    log_post: np.ndarray
    S: np.ndarray
    checkpoint: RamCheckpoint
    burn_in: int = 0
    pd_failures: int = 0
    names: Tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    def acceptance_rate(self, start: int = 0) -> float:
        return float(np.mean(self.accepted[start:])) if self.N > start else float('nan')

    def kept(self) -> np.ndarray:
        return self.samples[self.burn_in:]


def ram_mcmc(log_posterior: Callable[[np.ndarray], float], init: Sequence[float], n_iter: int,
             alpha_star: float = 0.234, gamma: float = 2.0 / 3.0, seed: int = 0,
             blocks: Optional[Sequence[Sequence[int]]] = None, s0: Optional[np.ndarray] = None,
             checkpoint: Optional[RamCheckpoint] = None,
             on_accept: Optional[Callable[[np.ndarray], None]] = None,
             progress: Optional[Callable[[int, int], None]] = None) -> McmcChain:
    """
    Robust adaptive Metropolis.

    Proposal theta + S U with U standard normal outside the active block set
    to zero; blocks cycle in the given order. After each step
    S S^T <- S (I + eta (alpha - alpha_star) U U^T / |U|^2) S^T with
    eta = n^-gamma, refactored by Cholesky.

    Args:
        log_posterior: returns -inf outside the support
        init: starting point with finite posterior
        n_iter: iterations to run (after the checkpoint when resuming)
        blocks: index sets updated together; None updates every coordinate
        s0: initial lower-triangular scale, identity by default
        checkpoint: resume a previous run bit-for-bit
        on_accept: called with the new state after each accepted move

    Returns:
        McmcChain with n_iter draws and a checkpoint for resuming
    """
    if checkpoint is not None:
        theta = np.array(checkpoint.theta, dtype=float)
        current = float(checkpoint.log_post)
        S = np.array(checkpoint.S, dtype=float)
        start = checkpoint.iteration
        rng = np.random.Generator(np.random.Philox())
        rng.bit_generator.state = checkpoint.rng_state
    else:
        theta = np.array(init, dtype=float)
        current = float(log_posterior(theta))
        if not np.isfinite(current):
            raise InvalidInputError("RAM start point has zero posterior density")
        S = np.array(s0, dtype=float) if s0 is not None else np.eye(theta.size)
        start = 0
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    d = theta.size
    blocks = [np.asarray(b, dtype=int) for b in blocks] if blocks else [np.arange(d)]

    samples = np.empty((n_iter, d))
    accepted = np.zeros(n_iter, dtype=bool)
    log_post = np.empty(n_iter)
    pd_failures = 0
    for step in range(n_iter):
        n = start + step + 1
        block = blocks[(n - 1) % len(blocks)]
        U = np.zeros(d)
        U[block] = rng.standard_normal(block.size)
        proposal = theta + S @ U
        candidate = float(log_posterior(proposal))
        if not np.isfinite(candidate):
            candidate = -np.inf
        accept_prob = 1.0 if candidate >= current else float(np.exp(candidate - current))
        if rng.random() < accept_prob:
            theta, current = proposal, candidate
            accepted[step] = True
            if on_accept is not None:
                on_accept(theta)

        norm2 = float(U @ U)
        if norm2 > 0:
            eta = n ** -gamma
            M = S @ (np.eye(d) + eta * (accept_prob - alpha_star) * np.outer(U, U) / norm2) @ S.T
            try:
                S = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                pd_failures += 1
                logger.warning(f"RAM scale update lost positive definiteness at iteration {n}; kept previous S")
        samples[step] = theta
        log_post[step] = current
        if progress is not None:
            progress(step + 1, n_iter)

    resume = RamCheckpoint(theta.copy(), current, S.copy(), start + n_iter, rng.bit_generator.state)
    return McmcChain(samples, accepted, log_post, S, resume, 0, pd_failures)


@dataclass(frozen=True)
class GewekeResult:
    burn_in: int
    z: float
    p_value: float


def _mean_variance(segment: np.ndarray, batches: int) -> float:
    """Variance of the segment mean by non-overlapping batch means"""
    count = min(batches, segment.size)
    size = segment.size // count
    means = segment[:count * size].reshape(count, size).mean(axis=1)
    if count < 2:
        return 0.0
    return float(np.var(means, ddof=1) / count)


def geweke_z(series: Sequence[float], first: float = 0.1, last: float = 0.5, batches: int = 20) -> float:
    """Geweke statistic: first 10% against last 50% of the series"""
    series = np.asarray(series, dtype=float)
    n = series.size
    head = series[:max(2, int(np.floor(first * n)))]
    tail = series[n - max(2, int(np.floor(last * n))):]
    variance = _mean_variance(head, batches) + _mean_variance(tail, batches)
    diff = float(head.mean() - tail.mean())
    if variance <= 0:
        return 0.0 if diff == 0 else float('inf')
    return diff / np.sqrt(variance)


def _burnin_grid(n: int) -> range:
    return range(0, n // 2 + 1, max(1, n // 50))


def geweke_burnin(series: Sequence[float]) -> GewekeResult:
    """
    Burn-in minimizing |z| over a grid up to half the chain.

    Raises:
        InvalidInputError: fewer than 40 values
        DegenerateDataError: constant series
    """
    series = np.asarray(series, dtype=float)
    if series.size < 40:
        raise InvalidInputError(f"Geweke diagnostic needs at least 40 values, got {series.size}")
    if np.ptp(series) == 0:
        raise DegenerateDataError("Constant chain: Geweke statistic is undefined")
    best = None
    for burn in _burnin_grid(series.size):
        z = geweke_z(series[burn:])
        if best is None or abs(z) < abs(best[1]):
            best = (burn, z)
    burn, z = best
    return GewekeResult(burn, float(z), float(2.0 * norm.sf(abs(z))))


def geweke_burnin_multi(samples: np.ndarray) -> GewekeResult:
    """Burn-in minimizing the average |z| over the non-constant columns"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        return geweke_burnin(samples)
    if samples.shape[0] < 40:
        raise InvalidInputError(f"Geweke diagnostic needs at least 40 draws, got {samples.shape[0]}")
    columns = [c for c in range(samples.shape[1]) if np.ptp(samples[:, c]) > 0]
    if not columns:
        raise DegenerateDataError("Every parameter trace is constant")
    best = None
    for burn in _burnin_grid(samples.shape[0]):
        zs = np.array([geweke_z(samples[burn:, c]) for c in columns])
        score = float(np.mean(np.abs(zs)))
        if best is None or score < best[1]:
            best = (burn, score)
    burn, score = best
    return GewekeResult(burn, score, float(2.0 * norm.sf(score)))


def pack_theta2(keys: Sequence[DagCopulaKey], theta2: Dict[DagCopulaKey, CopulaParams]) -> np.ndarray:
    return np.array([[theta2[k].phi_bar, theta2[k].a, theta2[k].b, theta2[k].v] for k in keys],
                    dtype=float).ravel()


def unpack_theta2(keys: Sequence[DagCopulaKey], x: np.ndarray) -> Dict[DagCopulaKey, CopulaParams]:
    x = np.asarray(x, dtype=float).reshape(len(keys), 4)
    return {k: CopulaParams(*(float(value) for value in row)) for k, row in zip(keys, x)}


def in_prior_support(params: CopulaParams) -> bool:
    """Flat prior region: stationarity, |phi_bar| < 1 and 2 < v <= V_MAX"""
    return not validate_copula_params(params) and params.v <= V_MAX


class DagLogPosterior:
    """
    l2 plus the log of a flat prior, evaluated incrementally: a proposal that
    changes one node's copulas only recomputes that node and its descendants.
    """

    def __init__(self, u_factors: np.ndarray, dag: Dag, theta2: Dict[DagCopulaKey, CopulaParams],
                 m_sc: int = DEFAULT_M_SC):
        self.u_factors = np.asarray(u_factors, dtype=float)
        self.dag = dag
        self.m_sc = m_sc
        self.keys = dag_copula_keys(dag)
        self.state = IncrementalDagLikelihood(self.u_factors, dag, theta2, m_sc)
        self.theta = pack_theta2(self.keys, theta2)
        self._pending = None
        self.evaluations = 0

    def __call__(self, x: np.ndarray) -> float:
        self.evaluations += 1
        theta2 = unpack_theta2(self.keys, x)
        if not all(in_prior_support(p) for p in theta2.values()):
            self._pending = None
            return -np.inf
        changed = np.flatnonzero(np.any(x.reshape(-1, 4) != self.theta.reshape(-1, 4), axis=1))
        nodes = {self.keys[i].child for i in changed}
        if not nodes:
            self._pending = ('same', x.copy())
            return self.state.loglik
        if len(nodes) == 1:
            node = nodes.pop()
            value = self.state.evaluate(node, {k: theta2[k] for k in node_copula_keys(self.dag, node)})
            self._pending = ('node', x.copy())
            return value
        fresh = IncrementalDagLikelihood(self.u_factors, self.dag, theta2, self.m_sc)
        self._pending = ('full', x.copy(), fresh)
        return fresh.loglik

    def accept(self, x: np.ndarray):
        if self._pending is None:
            return
        kind = self._pending[0]
        if kind == 'node':
            self.state.commit()
        elif kind == 'full':
            self.state = self._pending[2]
        self.theta = np.asarray(x, dtype=float).copy()
        self._pending = None


@dataclass
class DagPosterior:
    """Posterior summaries of the DAG copulas; theta2 is the chosen point estimate"""
    theta2: Dict[DagCopulaKey, CopulaParams]
    medians: Dict[DagCopulaKey, CopulaParams]
    means: Dict[DagCopulaKey, CopulaParams]
    intervals: Dict[DagCopulaKey, Tuple[CopulaParams, CopulaParams]]
    chain: McmcChain
    init: Dict[DagCopulaKey, CopulaParams]
    keys: List[DagCopulaKey]
    geweke: Optional[GewekeResult] = None


def parameter_names(keys: Sequence[DagCopulaKey]) -> Tuple[str, ...]:
    return tuple(f"{name}[{k.label()}]" for k in keys for name in PARAM_NAMES)


def fit_dag_mcmc(panel: ReturnPanel, marginals: Sequence[GarchParams], dag: Dag, n_iter: int = 20000,
                 seed: int = 0, init: Optional[DagFit] = None, m_sc: int = DEFAULT_M_SC,
                 summary: str = 'median', progress: Optional[Callable[[int, int], None]] = None) -> DagPosterior:
    """
    Sample the DAG copula parameters with RAM, starting from sequential
    estimates, and summarize after an automatic Geweke burn-in.

    Args:
        summary: 'median' (default) or 'mean' point estimate
    """
    if summary not in ('median', 'mean'):
        raise InvalidInputError(f"summary must be 'median' or 'mean', got {summary!r}")
    pits = marginal_pits(panel.without_stocks(), marginals[:panel.m])
    if init is None:
        init = SequentialDagFitter(pits.u, m_sc).fit(dag)
    keys = dag_copula_keys(dag)
    start = {k: init.theta2[k] for k in keys}
    if not keys:
        empty = McmcChain(np.empty((0, 0)), np.empty(0, dtype=bool), np.empty(0), np.empty((0, 0)),
                          RamCheckpoint(np.empty(0), 0.0, np.empty((0, 0)), 0, {}))
        return DagPosterior({}, {}, {}, {}, empty, {}, [])

    target = DagLogPosterior(pits.u, dag, start, m_sc)
    x0 = pack_theta2(keys, start)
    blocks = [list(range(4 * i, 4 * i + 4)) for i in range(len(keys))]
    s0 = np.diag(np.tile(PROPOSAL_SCALE, len(keys)))
    chain = ram_mcmc(target, x0, n_iter, seed=seed, blocks=blocks, s0=s0, on_accept=target.accept,
                     progress=progress)
    chain.names = parameter_names(keys)

    geweke = None
    if chain.N >= 40 and np.ptp(chain.samples, axis=0).max() > 0:
        geweke = geweke_burnin_multi(chain.samples)
        chain.burn_in = geweke.burn_in
    kept = chain.kept()
    medians = _summaries(keys, np.median(kept, axis=0))
    means = _summaries(keys, np.mean(kept, axis=0))
    low = _summaries(keys, np.quantile(kept, 0.05, axis=0))
    high = _summaries(keys, np.quantile(kept, 0.95, axis=0))
    intervals = {k: (low[k], high[k]) for k in keys}

    chosen = medians if summary == 'median' else means
    theta2 = {}
    for k in keys:
        if in_prior_support(chosen[k]):
            theta2[k] = chosen[k]
        else:
            logger.info(f"Posterior {summary} of {k.label()} is outside the prior support; using the mean")
            theta2[k] = means[k]
    return DagPosterior(theta2, medians, means, intervals, chain, start, keys, geweke)


def _summaries(keys, vector) -> Dict[DagCopulaKey, CopulaParams]:
    return unpack_theta2(keys, vector)


def write_chain_csv(chain: McmcChain, path: str):
    """Long format iter,param,value,accepted"""
    names = chain.names or tuple(f"theta{i}" for i in range(chain.samples.shape[1]))
    N, d = chain.samples.shape
    frame = pd.DataFrame({
        'iter': np.repeat(np.arange(N), d),
        'param': np.tile(np.array(names, dtype=object), N),
        'value': chain.samples.ravel(),
        'accepted': np.repeat(chain.accepted.astype(int), d),
    })
    frame.to_csv(path, index=False, float_format='%.17g')


@dataclass
class StockFits:
    theta3: Tuple[Tuple[CopulaParams, ...], ...]
    fits: List[List[CopulaFit]]

    @property
    def n_failed(self) -> int:
        return sum(not f.converged for level_fits in self.fits for f in level_fits)


def fit_stock(u_stock: np.ndarray, factor_inputs: np.ndarray, m_sc: int = DEFAULT_M_SC,
              inits: Optional[Sequence[CopulaParams]] = None) -> List[CopulaFit]:
    """Level-by-level sequential fit of one stock's m copulas"""
    fits = []
    u = np.asarray(u_stock, dtype=float)
    for level in range(factor_inputs.shape[1]):
        init = inits[level] if inits is not None else None
        fit = sequential_fit_copula(u, factor_inputs[:, level], init, m_sc)
        fits.append(fit)
        _, _, u = copula_series(u, factor_inputs[:, level], fit.params, m_sc)
    return fits


def fit_stocks(panel: ReturnPanel, marginals: Sequence[GarchParams], lattice: ConditionalLattice,
               max_workers: int = 1, inits: Optional[Sequence[Sequence[CopulaParams]]] = None,
               progress: Optional[Callable[[int, int], None]] = None) -> StockFits:
    """
    Stock copulas for every stock, conditioning on the lattice built at the
    final DAG copula estimates. Stocks are independent and may run in parallel.
    """
    if lattice.dag.m != panel.m:
        raise InvalidInputError(f"Lattice has {lattice.dag.m} factors, panel has {panel.m}")
    pits = marginal_pits(panel, marginals)
    factor_inputs = lattice.stock_inputs()
    done = [0]
    lock = threading.Lock()

    def fit_one(j: int) -> List[CopulaFit]:
        result = fit_stock(pits.u[:, panel.m + j], factor_inputs, lattice.m_sc,
                           inits[j] if inits is not None else None)
        if progress is not None:
            with lock:
                done[0] += 1
                progress(done[0], panel.p)
        return result

    if max_workers > 1 and panel.p > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            fits = list(pool.map(fit_one, range(panel.p)))
    else:
        fits = [fit_one(j) for j in range(panel.p)]
    result = StockFits(tuple(tuple(f.params for f in level_fits) for level_fits in fits), fits)
    if result.n_failed:
        logger.warning(f"{result.n_failed} stock copula fits did not converge")
    return result


@dataclass
class EstimationResult:
    model: FittedModel
    marginal_fits: List[GarchFit]
    dag_fit: DagFit
    posterior: Optional[DagPosterior]
    stock_fits: StockFits


def estimate_model(panel: ReturnPanel, dag: Dag, method: str = 'sequential', mcmc_iterations: int = 20000,
                   seed: int = 0, m_sc: int = DEFAULT_M_SC, marginal_inits: Optional[Sequence[GarchParams]] = None,
                   max_workers: int = 1, summary: str = 'median',
                   progress: Optional[Callable[[str, int, int], None]] = None) -> EstimationResult:
    """
    Three-stage fit: GARCH marginals, DAG copulas (sequential or
    sequential + RAM), then stock copulas given the DAG estimates.
    """
    if method not in ('sequential', 'mcmc'):
        raise InvalidInputError(f"method must be 'sequential' or 'mcmc', got {method!r}")
    marginal_fits = [fit_garch(panel.values[:, col], marginal_inits[col] if marginal_inits else None)
                     for col in range(panel.values.shape[1])]
    marginals = tuple(f.params for f in marginal_fits)

    pits = marginal_pits(panel, marginals)
    dag_fit = SequentialDagFitter(pits.u[:, :panel.m], m_sc).fit(dag)
    theta2 = dag_fit.theta2
    posterior = None
    if method == 'mcmc':
        step = (lambda i, n: progress('dag', i, n)) if progress else None
        posterior = fit_dag_mcmc(panel, marginals, dag, mcmc_iterations, seed, dag_fit, m_sc, summary, step)
        theta2 = posterior.theta2

    lattice = dag_loglik_from_u(pits.u[:, :panel.m], dag, theta2, m_sc).lattice
    step = (lambda i, n: progress('stocks', i, n)) if progress else None
    stock_fits = fit_stocks(panel, marginals, lattice, max_workers, progress=step)
    model = FittedModel(marginals, dag, theta2, stock_fits.theta3, m_sc, panel.symbols)
    return EstimationResult(model, marginal_fits, dag_fit, posterior, stock_fits)
