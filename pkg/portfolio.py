"""
Portfolio construction from one-day-ahead scenarios.

Two books are supported: minimum variance on a scenario covariance whose
diagonal is replaced by the exact one-day variances, and minimum CVaR via
the scenario linear program. Several fitted networks can be averaged with
BIC weights.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog, minimize

from data_model import DegenerateDataError, FittedModel, InvalidInputError, ReturnPanel, SolverError
from simulate import ScenarioSet, derive_seed, forecast_state, make_rng, simulate_one_day

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class PortfolioSolution:
    """
    weights sum to one. objective is the predicted variance (percent^2) for
    'mv' and the predicted CVaR (percent) for 'mcvar', where var_level is
    the optimal VaR level a of the scenario program.
    """
    weights: np.ndarray
    objective: float
    kind: str
    var_level: Optional[float] = None
    alpha: Optional[float] = None


def covariance_from_scenarios(scenarios: ScenarioSet, lambda_diag: Sequence[float]) -> np.ndarray:
    """
    Uncentered scenario second moments rescaled to the given variances:
    correlations from (1/K) sum r r', diagonal equal to lambda_diag.
    """
    R = scenarios.returns
    K, p = R.shape
    lam = np.asarray(lambda_diag, dtype=float)
    if K < p + 1:
        raise InvalidInputError(f"Need K >= p+1 scenarios for a {p}-asset covariance, got K={K}")
    if lam.shape != (p,):
        raise InvalidInputError(f"lambda_diag has shape {lam.shape}, expected ({p},)")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidInputError("Exact variances must be positive")
    second = R.T @ R / K
    d = np.diag(second)
    if np.any(d <= 0):
        raise DegenerateDataError("A scenario column is identically zero")
    scale = np.sqrt(lam / d)
    cov = second * np.outer(scale, scale)
    cov = (cov + cov.T) / 2.0
    cov[np.diag_indices(p)] = lam
    return cov


def _cholesky(cov: np.ndarray):
    try:
        return cho_factor(cov)
    except LinAlgError:
        pass
    p = cov.shape[0]
    ridge = RIDGE_SCALE * np.trace(cov) / p
    logger.warning(f"Covariance not positive definite, adding ridge {ridge:.3g}")
    try:
        return cho_factor(cov + ridge * np.eye(p))
    except LinAlgError as e:
        raise SolverError(f"Covariance is singular even after ridge: {e}")


def solve_mv(cov: np.ndarray, long_only: bool = False) -> PortfolioSolution:
    """
    Minimum-variance weights under sum(w) = 1.

    Without long_only the closed form S^-1 1 / (1' S^-1 1) is used.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError(f"Covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise InvalidInputError("Covariance must be symmetric")
    p = cov.shape[0]
    factor = _cholesky(cov)
    x = cho_solve(factor, np.ones(p))
    weights = x / x.sum()

    if long_only and np.any(weights < 0):
        result = minimize(lambda w: w @ cov @ w, np.full(p, 1.0 / p), jac=lambda w: 2.0 * cov @ w,
                          method='SLSQP', bounds=[(0.0, None)] * p,
                          constraints=[{'type': 'eq', 'fun': lambda w: w.sum() - 1.0}],
                          options={'ftol': 1e-14, 'maxiter': 500})
        if not result.success:
            raise SolverError(f"Long-only variance problem failed: {result.message}")
        weights = np.clip(result.x, 0.0, None)
        weights = weights / weights.sum()
    return PortfolioSolution(weights, float(weights @ cov @ weights), 'mv')


def solve_mcvar(scenarios: ScenarioSet, alpha: float, long_only: bool = False) -> PortfolioSolution:
    """
    Minimum-CVaR weights from the scenario linear program

        min  -a + 1/(K alpha) sum_k u_k
        s.t. sum(w) = 1,  u_k >= 0,  w'r_k - a + u_k >= 0

    over x = [w, a, u]. The optimal value is the CVaR prediction.
    """
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    R = scenarios.returns
    K, p = R.shape
    if K * alpha < 1:
        logger.warning(f"K*alpha = {K * alpha:.3g} < 1, the tail holds less than one scenario")

    c = np.concatenate([np.zeros(p), [-1.0], np.full(K, 1.0 / (K * alpha))])
    A_ub = sparse.hstack([sparse.csr_matrix(-R), sparse.csr_matrix(np.ones((K, 1))),
                          -sparse.identity(K, format='csr')], format='csr')
    b_ub = np.zeros(K)
    A_eq = np.concatenate([np.ones(p), [0.0], np.zeros(K)])[None, :]
    w_bounds = (0.0, None) if long_only else (None, None)
    bounds = [w_bounds] * p + [(None, None)] + [(0.0, None)] * K

    result = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method='highs')
    if result.status != 0:
        raise SolverError(f"CVaR program failed (status {result.status}): {result.message}")
    weights = result.x[:p]
    return PortfolioSolution(weights, float(result.fun), 'mcvar', float(result.x[p]), alpha)


def estimate_cvar(portfolio_returns: Sequence[float], alpha: float, var_level: Optional[float] = None) -> float:
    """
    Predicted CVaR of a portfolio from its scenario returns.

    By default: minus the mean of returns strictly below the empirical
    alpha-quantile, taken as the ascending order statistic at 0-based index
    ceil(K alpha). With var_level the scenario objective
    -a + 1/(K alpha) sum (a - r)^+ is evaluated at a = var_level instead.
    """
    r = np.asarray(portfolio_returns, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise InvalidInputError("Need a non-empty vector of portfolio returns")
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    K = r.size
    if var_level is not None:
        return float(-var_level + np.sum(np.maximum(var_level - r, 0.0)) / (K * alpha))
    if K * alpha < 1:
        raise InvalidInputError(f"K*alpha must be >= 1, got {K * alpha:.3g}")
    index = min(int(np.ceil(K * alpha - 1e-12)), K - 1)
    quantile = np.sort(r)[index]
    tail = r[r < quantile]
    if tail.size == 0:
        raise DegenerateDataError(f"No scenario falls below the {alpha} quantile {quantile}")
    return float(-tail.mean())


def mv_cvars(scenarios: ScenarioSet, solution: PortfolioSolution, alphas: Sequence[float]) -> List[float]:
    """CVaR predictions of a fixed portfolio, one per alpha"""
    returns = scenarios.returns @ solution.weights
    return [estimate_cvar(returns, alpha) for alpha in alphas]


@dataclass(frozen=True)
class Forecast:
    """One day ahead: stock scenarios plus the variance-matched covariance"""
    scenarios: ScenarioSet
    covariance: np.ndarray
    variances: np.ndarray


def single_model_forecast(model: FittedModel, history: ReturnPanel, K: int, seed: int,
                          workers: int = 1) -> Forecast:
    state = forecast_state(model, history)
    scenarios = simulate_one_day(model, history, K, seed, workers, state=state)
    variances = state.stock_variances(model.m)
    return Forecast(scenarios, covariance_from_scenarios(scenarios, variances), variances)


@dataclass(frozen=True)
class AveragedForecast(Forecast):
    weights: np.ndarray = None
    forecasts: Tuple[Forecast, ...] = ()


def average_weights(scores: Sequence[float]) -> np.ndarray:
    """exp(score) normalized, shifted by the maximum first"""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0 or not np.all(np.isfinite(scores)):
        raise InvalidInputError("Model averaging needs at least one finite score")
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def model_average(models: Sequence[FittedModel], scores: Sequence[float], history: ReturnPanel, K: int,
                  seed: int, workers: int = 1) -> AveragedForecast:
    """
    BIC-weighted average of several fitted networks.

    The covariance is the weighted sum of the models' covariances. Mixed
    scenarios take row k from model j with probability weight j. A single
    model reduces to single_model_forecast with the same seed.
    """
    if len(models) != len(scores):
        raise InvalidInputError(f"{len(models)} models but {len(scores)} scores")
    weights = average_weights(scores)
    if len(models) == 1:
        single = single_model_forecast(models[0], history, K, seed, workers)
        return AveragedForecast(single.scenarios, single.covariance, single.variances, weights, (single,))

    forecasts = tuple(single_model_forecast(model, history, K, derive_seed(seed, j + 1), workers)
                      for j, model in enumerate(models))
    covariance = sum(w * f.covariance for w, f in zip(weights, forecasts))
    variances = sum(w * f.variances for w, f in zip(weights, forecasts))

    choice = make_rng(seed, 0).choice(len(models), size=K, p=weights)
    stacked = np.stack([f.scenarios.returns for f in forecasts])
    mixed = stacked[choice, np.arange(K)]
    scenarios = ScenarioSet(mixed, forecasts[0].scenarios.symbols, 'average', seed)
    logger.info("Model weights: " + ", ".join(f"{w:.4f}" for w in weights))
    return AveragedForecast(scenarios, covariance, variances, weights, forecasts)


def write_weights_csv(rows: Sequence[Tuple[str, Sequence[str], np.ndarray]], path: str, book: Optional[str] = None):
    """date,symbol,weight (plus book when given), from (date, symbols, weights) rows"""
    records = []
    for date, symbols, weights in rows:
        for symbol, weight in zip(symbols, weights):
            record = {'date': date, 'symbol': symbol, 'weight': float(weight)}
            if book is not None:
                record['book'] = book
            records.append(record)
    pd.DataFrame(records, columns=['date', 'symbol', 'weight'] + (['book'] if book else [])).to_csv(
        path, index=False, float_format='%.17g')


def write_cvar_csv(rows: Sequence[Tuple[str, float, float]], path: str):
    """date,alpha,cvar"""
    pd.DataFrame(list(rows), columns=['date', 'alpha', 'cvar']).to_csv(path, index=False, float_format='%.17g')
