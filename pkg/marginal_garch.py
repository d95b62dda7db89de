"""
GARCH(1,1) with standardized Student-t innovations: variance filtering,
densities, CDF/quantile transforms, maximum likelihood and one-day-ahead
variance forecasts.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit, gammaln, logit, stdtr, stdtrit

from data_model import (DegenerateDataError, GarchParams, InvalidInputError, ReturnPanel,
                        validate_garch_params)

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 50
V_MAX = 100.0
PERSISTENCE_MAX = 1.0 - 1e-6
U_CLIP = 1e-12

# Conditional variances sigma2_t, one per day (percent^2 units)
VarianceSeries = np.ndarray


def _check_params(params: GarchParams):
    problems = validate_garch_params(params)
    if problems:
        raise InvalidInputError("Invalid GARCH parameters: " + "; ".join(problems))


def garch_filter(params: GarchParams, returns: Sequence[float]) -> VarianceSeries:
    """
    sigma2_t = omega + alpha * r_{t-1}^2 + beta * sigma2_{t-1}, started at the
    unconditional variance omega / (1 - alpha - beta).
    """
    _check_params(params)
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 1 or returns.size == 0:
        raise InvalidInputError("Returns must be a non-empty 1-D series")

    sigma2_0 = params.omega / (1.0 - params.alpha - params.beta)
    drive = params.omega + params.alpha * returns[:-1] ** 2
    if drive.size == 0:
        return np.array([sigma2_0])
    tail, _ = lfilter([1.0], [1.0, -params.beta], drive, zi=[params.beta * sigma2_0])
    return np.concatenate(([sigma2_0], tail))


def std_t_logpdf(r, sigma2, v):
    """Log density of r when r / sigma is standardized t with v dof (unit variance)"""
    r = np.asarray(r, dtype=float)
    scale2 = (v - 2.0) * sigma2
    return (gammaln((v + 1.0) / 2.0) - gammaln(v / 2.0)
            - 0.5 * np.log(np.pi * scale2)
            - (v + 1.0) / 2.0 * np.log1p(r * r / scale2))


def std_t_density(r, sigma2, v):
    if np.any(np.asarray(sigma2) <= 0) or np.any(np.asarray(v) <= 2):
        raise InvalidInputError("std_t_density needs sigma2 > 0 and v > 2")
    return np.exp(std_t_logpdf(r, sigma2, v))


def marginal_cdf(r, sigma2, v, standardized: bool = True):
    """
    u = T_v(r * sqrt(v / ((v - 2) sigma2))), clipped into [1e-12, 1 - 1e-12].

    standardized=False drops the (v - 2) scaling and evaluates T_v(r / sigma),
    which is defined for any v > 0.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if standardized:
        z = np.asarray(r, dtype=float) * np.sqrt(v / ((v - 2.0) * sigma2))
    else:
        z = np.asarray(r, dtype=float) / np.sqrt(sigma2)
    return np.clip(stdtr(v, z), U_CLIP, 1.0 - U_CLIP)


def marginal_quantile(u, sigma2, v, standardized: bool = True):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise InvalidInputError("Quantile argument must lie in (0, 1)")
    z = stdtrit(v, u)
    if standardized:
        return z * np.sqrt((v - 2.0) * np.asarray(sigma2, dtype=float) / v)
    return z * np.sqrt(np.asarray(sigma2, dtype=float))


def garch_loglik(params: GarchParams, returns: Sequence[float]) -> float:
    """Sum over days of the log standardized-t density under the filtered variances"""
    returns = np.asarray(returns, dtype=float)
    sigma2 = garch_filter(params, returns)
    return float(np.sum(std_t_logpdf(returns, sigma2, params.v)))


def forecast_variance(params: GarchParams, last_r, last_sigma2):
    """One-day-ahead variance omega + alpha * r_T^2 + beta * sigma2_T"""
    return params.omega + params.alpha * np.asarray(last_r) ** 2 + params.beta * np.asarray(last_sigma2)


def forecast_next_variance(params: GarchParams, returns: Sequence[float]) -> float:
    returns = np.asarray(returns, dtype=float)
    sigma2 = garch_filter(params, returns)
    return float(forecast_variance(params, returns[-1], sigma2[-1]))


@dataclass(frozen=True)
class GarchFit:
    params: GarchParams
    loglik: float
    converged: bool
    message: str = ''


def _to_params(x: np.ndarray) -> GarchParams:
    persistence = PERSISTENCE_MAX * expit(x[1])
    alpha = persistence * expit(x[2])
    return GarchParams(omega=float(np.exp(x[0])), alpha=float(alpha),
                       beta=float(persistence - alpha), v=float(2.0 + (V_MAX - 2.0) * expit(x[3])))


def _from_params(params: GarchParams) -> np.ndarray:
    persistence = min(max(params.alpha + params.beta, 1e-6), PERSISTENCE_MAX * (1 - 1e-9))
    share = min(max(params.alpha / persistence, 1e-6), 1 - 1e-6)
    v_share = min(max((params.v - 2.0) / (V_MAX - 2.0), 1e-6), 1 - 1e-6)
    return np.array([np.log(params.omega), logit(persistence / PERSISTENCE_MAX), logit(share), logit(v_share)])


def fit_garch(returns: Sequence[float], init: Optional[GarchParams] = None) -> GarchFit:
    """
    Maximum likelihood GARCH(1,1)-t fit.

    Args:
        returns: percent log returns, at least 50 days
        init: warm start; defaults to omega from the sample variance, alpha=0.05,
              beta=0.90, v=8

    Returns:
        GarchFit with the best parameters found; converged=False flags an
        optimizer that stopped without meeting its tolerance
    """
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 1 or returns.size < MIN_OBSERVATIONS:
        raise InvalidInputError(f"Need at least {MIN_OBSERVATIONS} returns, got {returns.size}")
    if not np.all(np.isfinite(returns)):
        raise InvalidInputError("Returns contain non-finite values")
    variance = float(np.mean(returns ** 2))
    if variance <= 1e-12 or np.ptp(returns) == 0:
        raise DegenerateDataError("Returns have zero variance; GARCH fit is undefined")

    if init is None or validate_garch_params(init):
        init = GarchParams(omega=variance * 0.05, alpha=0.05, beta=0.90, v=8.0)

    def objective(x):
        params = _to_params(x)
        if params.omega <= 0 or not np.isfinite(params.omega):
            return 1e12
        value = -garch_loglik(params, returns)
        return value if np.isfinite(value) else 1e12

    x0 = _from_params(init)
    result = minimize(objective, x0, method='L-BFGS-B')
    best = result.x if result.fun <= objective(x0) else x0
    params = _to_params(best)
    converged = bool(result.success)
    if not converged:
        logger.warning(f"GARCH fit did not converge: {result.message}")
    return GarchFit(params, garch_loglik(params, returns), converged, str(result.message))


def fit_marginals(panel: ReturnPanel, inits: Optional[Sequence[GarchParams]] = None) -> List[GarchFit]:
    """Fit every column of the panel separately"""
    fits = []
    for col in range(panel.values.shape[1]):
        init = inits[col] if inits is not None else None
        fits.append(fit_garch(panel.values[:, col], init=init))
    return fits


def write_marginals_csv(path: str, symbols: Sequence[str], fits: Sequence[GarchFit]):
    rows = [{'symbol': s, 'omega': f.params.omega, 'alpha': f.params.alpha, 'beta': f.params.beta,
             'v': f.params.v, 'loglik': f.loglik} for s, f in zip(symbols, fits)]
    pd.DataFrame(rows, columns=['symbol', 'omega', 'alpha', 'beta', 'v', 'loglik']).to_csv(
        path, index=False, float_format='%.17g')


def read_marginals_csv(path: str, symbols: Optional[Sequence[str]] = None) -> List[GarchParams]:
    """Marginal parameters, reordered to match symbols when given"""
    frame = pd.read_csv(path, dtype={'symbol': str})
    if symbols is not None:
        frame = frame.set_index('symbol')
        missing = [s for s in symbols if s not in frame.index]
        if missing:
            raise InvalidInputError(f"Marginals file has no row for: {missing}")
        frame = frame.loc[list(symbols)].reset_index()
    return [GarchParams(float(r.omega), float(r.alpha), float(r.beta), float(r.v)) for r in frame.itertuples()]
