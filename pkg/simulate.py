"""
Forward simulation of GC-GARCH return panels and one-day-ahead scenarios.

Each day draws independent uniforms w, one per series. A factor's w is
F(i | pa(i)); walking its copulas backwards with h_inv recovers F(i). A
stock's w is F(j | all factors) and is unwound level by level the same way.
Marginal quantiles under the GARCH variances give the returns.

Randomness is counter-based: day t (or scenario block b) gets its own
Philox stream from SeedSequence(seed, spawn_key=(t,)), so results do not
depend on how the work is split.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import stdtrit

from data_model import (CopulaParams, Dag, DagCopulaKey, FittedModel, GarchParams, InvalidInputError,
                        ReturnPanel, dag_copula_keys)
from marginal_garch import forecast_variance, marginal_quantile
from pcc_engine import (dag_loglik_from_u, marginal_pits, node_copula_keys, resolve_conditional,
                        stock_conditionals)
from tcopula import clip_unit, dyn_corr_step, h_inv, initial_state, next_correlation

logger = logging.getLogger(__name__)

SCENARIO_BLOCK = 4096


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(keys))))


def derive_seed(seed: int, *keys: int) -> int:
    """A new 32-bit seed tied to (seed, keys)"""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1)[0])


def stack_copulas(params: Sequence[CopulaParams]) -> CopulaParams:
    """One CopulaParams whose fields are arrays, for running many copulas at once"""
    return CopulaParams(phi_bar=np.array([c.phi_bar for c in params], dtype=float),
                        a=np.array([c.a for c in params], dtype=float),
                        b=np.array([c.b for c in params], dtype=float),
                        v=np.array([c.v for c in params], dtype=float))


def stack_marginals(marginals: Sequence[GarchParams]) -> GarchParams:
    return GarchParams(omega=np.array([g.omega for g in marginals], dtype=float),
                       alpha=np.array([g.alpha for g in marginals], dtype=float),
                       beta=np.array([g.beta for g in marginals], dtype=float),
                       v=np.array([g.v for g in marginals], dtype=float))


@dataclass(frozen=True)
class ScenarioSet:
    """K x p one-day-ahead stock returns in percent"""
    returns: np.ndarray
    symbols: Tuple[str, ...]
    model_id: str = 'gcgarch'
    seed: Optional[int] = None

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2 or returns.shape[0] < 1:
            raise InvalidInputError("A scenario set needs a K x p matrix with K >= 1")
        if not np.all(np.isfinite(returns)):
            raise InvalidInputError("Scenario returns must be finite")
        if len(self.symbols) != returns.shape[1]:
            raise InvalidInputError(f"{len(self.symbols)} symbols for {returns.shape[1]} scenario columns")
        object.__setattr__(self, 'returns', returns)
        object.__setattr__(self, 'symbols', tuple(self.symbols))

    @property
    def K(self) -> int:
        return self.returns.shape[0]

    @property
    def p(self) -> int:
        return self.returns.shape[1]


def write_scenarios_csv(scenarios: ScenarioSet, path: str):
    """Long format k,symbol,return"""
    K, p = scenarios.returns.shape
    frame = pd.DataFrame({
        'k': np.repeat(np.arange(K), p),
        'symbol': np.tile(np.array(scenarios.symbols, dtype=object), K),
        'return': scenarios.returns.ravel(),
    })
    frame.to_csv(path, index=False, float_format='%.17g')


@dataclass(frozen=True)
class SimulationTrace:
    """A simulated panel plus the quantities behind it (all T x (m+p))"""
    panel: ReturnPanel
    sigma2: np.ndarray
    u: np.ndarray
    innovations: np.ndarray


def _invert_node(dag: Dag, chains: Dict[int, list], node: int, w, copulas: Dict[DagCopulaKey, CopulaParams],
                 phis: Dict[DagCopulaKey, float]) -> list:
    """Chain [F(i), F(i | i[1]), ..., F(i | pa(i))] from w = F(i | pa(i))"""
    values = [w]
    u = w
    for key in reversed(node_copula_keys(dag, node)):
        u_y = resolve_conditional(dag, chains, key.parent, key.given)
        u = h_inv(u, u_y, copulas[key].v, phis[key])
        values.append(u)
    return values[::-1]


def simulate_trace(model: FittedModel, T: int, seed: int, start: str = '2000-01-03') -> SimulationTrace:
    """
    Simulate T days, starting every correlation at phi_bar and every variance
    at its stationary level.
    """
    if T < 1:
        raise InvalidInputError(f"T must be positive, got {T}")
    m, p, dag, m_sc = model.m, model.p, model.dag, model.m_sc
    n = m + p
    marginals = stack_marginals(model.marginals)
    sigma2 = marginals.omega / (1.0 - marginals.alpha - marginals.beta)

    dag_states = {key: initial_state(params) for key, params in model.dag_copulas.items()}
    level_params = [stack_copulas([model.stock_copulas[j][level] for j in range(p)]) for level in range(m)]
    level_states = [initial_state(params) for params in level_params] if p else []

    returns = np.empty((T, n))
    sigma2_path = np.empty((T, n))
    u_path = np.empty((T, n))
    w_path = np.empty((T, n))
    for t in range(T):
        w = clip_unit(make_rng(seed, t).random(n))
        phis = {key: next_correlation(state, model.dag_copulas[key], m_sc) for key, state in dag_states.items()}

        chains = {}
        for node in dag.order:
            chains[node] = _invert_node(dag, chains, node, w[node], model.dag_copulas, phis)
        for key, params in model.dag_copulas.items():
            x = chains[key.child][len(key.given)]
            y = resolve_conditional(dag, chains, key.parent, key.given)
            new_xy = (stdtrit(params.v, clip_unit(x)), stdtrit(params.v, clip_unit(y)))
            dag_states[key] = dyn_corr_step(dag_states[key], params, new_xy, m_sc)

        u_day = np.empty(n)
        u_day[:m] = [chains[i][0] for i in range(m)]
        if p:
            factor_inputs = [chains[node][-1] for node in dag.order]
            u = w[m:]
            stock_chain = [u]
            for level in reversed(range(m)):
                params = level_params[level]
                phi = next_correlation(level_states[level], params, m_sc)
                u = h_inv(u, factor_inputs[level], params.v, phi)
                stock_chain.append(u)
            stock_chain = stock_chain[::-1]
            for level in range(m):
                params = level_params[level]
                new_xy = (stdtrit(params.v, clip_unit(stock_chain[level])),
                          stdtrit(params.v, clip_unit(np.full(p, factor_inputs[level]))))
                level_states[level] = dyn_corr_step(level_states[level], params, new_xy, m_sc)
            u_day[m:] = stock_chain[0]

        r = marginal_quantile(u_day, sigma2, marginals.v)
        returns[t], sigma2_path[t], u_path[t], w_path[t] = r, sigma2, u_day, w
        sigma2 = forecast_variance(marginals, r, sigma2)

    dates = tuple(pd.bdate_range(start, periods=T).strftime('%Y-%m-%d'))
    panel = ReturnPanel(dates, model.default_symbols(), returns, m)
    return SimulationTrace(panel, sigma2_path, u_path, w_path)


def simulate_panel(model: FittedModel, T: int, seed: int) -> ReturnPanel:
    """T days of returns; the same seed always gives the same panel"""
    return simulate_trace(model, T, seed).panel


@dataclass(frozen=True)
class ForecastState:
    """Everything the next day's distribution depends on"""
    sigma2_next: np.ndarray
    dag_phi: Dict[DagCopulaKey, float]
    stock_phi: np.ndarray

    def stock_variances(self, m: int) -> np.ndarray:
        return self.sigma2_next[m:]


def forecast_state(model: FittedModel, history: ReturnPanel) -> ForecastState:
    """
    Advance the GARCH filters and every correlation recursion over the
    history and return their one-day-ahead values.
    """
    if history.m != model.m or history.p != model.p:
        raise InvalidInputError(
            f"History has {history.m} factors and {history.p} stocks, model expects {model.m} and {model.p}")
    if history.T < model.m_sc + 1:
        raise InvalidInputError(f"History of {history.T} days is too short, need at least {model.m_sc + 1}")

    pits = marginal_pits(history, model.marginals)
    sigma2_next = forecast_variance(stack_marginals(model.marginals), history.values[-1], pits.sigma2[-1])

    lattice = dag_loglik_from_u(pits.u[:, :model.m], model.dag, model.dag_copulas, model.m_sc).lattice
    dag_phi = {key: float(lattice.phi_paths[key][-1]) for key in dag_copula_keys(model.dag)}
    factor_inputs = lattice.stock_inputs()
    stock_phi = np.empty((model.p, model.m))
    for j in range(model.p):
        chain = stock_conditionals(pits.u[:, model.m + j], factor_inputs, model.stock_copulas[j], model.m_sc)
        stock_phi[j] = chain.phi[-1]
    return ForecastState(np.asarray(sigma2_next, dtype=float), dag_phi, stock_phi)


def draw_cross_sections(model: FittedModel, state: ForecastState, rng: np.random.Generator,
                        size: int) -> np.ndarray:
    """size x (m+p) conditionally independent draws of the next day's returns"""
    m, p, dag = model.m, model.p, model.dag
    w = clip_unit(rng.random((size, m + p)))
    chains = {}
    for node in dag.order:
        chains[node] = _invert_node(dag, chains, node, w[:, node], model.dag_copulas, state.dag_phi)

    u_all = np.empty((size, m + p))
    for i in range(m):
        u_all[:, i] = chains[i][0]
    if p:
        u = w[:, m:]
        for level in reversed(range(m)):
            params = stack_copulas([model.stock_copulas[j][level] for j in range(p)])
            factor_input = chains[dag.order[level]][-1][:, None]
            u = h_inv(u, factor_input, params.v, state.stock_phi[:, level])
        u_all[:, m:] = u
    v = np.array([g.v for g in model.marginals])
    return marginal_quantile(u_all, state.sigma2_next, v)


def simulate_one_day(model: FittedModel, history: ReturnPanel, K: int, seed: int, workers: int = 1,
                     model_id: str = 'gcgarch', state: Optional[ForecastState] = None) -> ScenarioSet:
    """
    K scenarios for the day after the history, stock columns only.

    Draws are made in blocks of SCENARIO_BLOCK rows, block b using stream
    (seed, b); the output is the same for any worker count.
    """
    if K < 1:
        raise InvalidInputError(f"K must be positive, got {K}")
    if state is None:
        state = forecast_state(model, history)
    starts = list(range(0, K, SCENARIO_BLOCK))

    def draw(block: int) -> np.ndarray:
        size = min(SCENARIO_BLOCK, K - starts[block])
        return draw_cross_sections(model, state, make_rng(seed, block), size)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(draw, range(len(starts))))
    else:
        blocks = [draw(b) for b in range(len(starts))]
    returns = np.vstack(blocks)
    return ScenarioSet(returns[:, model.m:], history.stock_symbols, model_id, seed)


def _draw_copula(rng: np.random.Generator, phi_bar: Optional[float] = None) -> CopulaParams:
    b = rng.uniform(0.8, 0.96)
    a = (1.0 - b) * rng.uniform(0.3, 0.7)
    v = rng.uniform(5.0, 10.0)
    if phi_bar is None:
        phi_bar = rng.uniform(-1.0, 1.0)
    return CopulaParams(phi_bar=float(phi_bar), a=float(a), b=float(b), v=float(v))


def draw_parameters(dag: Dag, p: int, seed: int,
                    dag_copulas: Optional[Dict[DagCopulaKey, CopulaParams]] = None,
                    m_sc: int = 2) -> FittedModel:
    """
    Random model on a fixed DAG.

    Marginals: omega ~ U(0.01, 0.2), beta ~ U(0.8, 0.96), alpha ~ (1 - beta) U(0.3, 0.7),
    v ~ U(5, 10). Copulas: phi_bar ~ U(-1, 1), b ~ U(0.8, 0.96), a ~ (1 - b) U(0.3, 0.7),
    v ~ U(5, 10). dag_copulas, when given, replaces the drawn DAG copulas.
    """
    rng = make_rng(seed)
    marginals = []
    for _ in range(dag.m + p):
        beta = rng.uniform(0.8, 0.96)
        alpha = (1.0 - beta) * rng.uniform(0.3, 0.7)
        marginals.append(GarchParams(omega=float(rng.uniform(0.01, 0.2)), alpha=float(alpha),
                                     beta=float(beta), v=float(rng.uniform(5.0, 10.0))))
    drawn = {key: _draw_copula(rng) for key in dag_copula_keys(dag)}
    if dag_copulas is not None:
        drawn = dict(dag_copulas)
    stock_copulas = [[_draw_copula(rng) for _ in range(dag.m)] for _ in range(p)]
    return FittedModel(tuple(marginals), dag, drawn, stock_copulas, m_sc)


S1_EDGES = [(0, 1), (1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (2, 6), (4, 7)]

# (phi_bar, a, b, v)
S1_COPULAS = {
    DagCopulaKey(1, 0, ()): CopulaParams(-0.10, 0.04, 0.89, 5.29),
    DagCopulaKey(2, 1, ()): CopulaParams(0.40, 0.04, 0.91, 5.22),
    DagCopulaKey(3, 1, ()): CopulaParams(0.76, 0.04, 0.88, 7.26),
    DagCopulaKey(4, 1, ()): CopulaParams(0.59, 0.05, 0.84, 9.71),
    DagCopulaKey(5, 1, ()): CopulaParams(0.34, 0.02, 0.96, 5.18),
    DagCopulaKey(6, 1, ()): CopulaParams(0.27, 0.06, 0.81, 7.07),
    DagCopulaKey(6, 2, (1,)): CopulaParams(0.41, 0.09, 0.86, 6.59),
    DagCopulaKey(7, 4, ()): CopulaParams(-0.49, 0.12, 0.80, 7.27),
}

S2_EDGES = [(0, 1), (0, 2), (0, 3), (0, 4), (0, 6), (0, 8), (1, 2), (1, 3), (1, 6),
            (2, 6), (2, 7), (2, 9), (3, 4), (4, 5), (6, 8), (8, 9)]


def s1_graph() -> Dag:
    """8-factor graph with a hub at node 1"""
    return Dag.from_edges(8, S1_EDGES)


def s2_graph() -> Dag:
    """10-factor graph with several multi-parent nodes"""
    return Dag.from_edges(10, S2_EDGES)


def s1_model(p: int = 20, seed: int = 0) -> FittedModel:
    """S1 graph with its fixed DAG copulas; marginals and stock copulas drawn"""
    return draw_parameters(s1_graph(), p, seed, dag_copulas=S1_COPULAS)


def s2_model(p: int = 20, seed: int = 0) -> FittedModel:
    return draw_parameters(s2_graph(), p, seed)
