"""
Bivariate Student-t copula kernel: densities, h-function and its inverse,
the dynamic correlation recursion, tail dependence and the conversion from
conditional to unconditional correlation.

All functions broadcast over numpy arrays, so a correlation that changes day
by day can be passed as a series.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from scipy.special import gammaln, stdtr, stdtrit

from data_model import CopulaParams, InvalidInputError

U_CLIP = 1e-12
PHI_MAX = 1.0 - 1e-10
DEFAULT_M_SC = 2


def clip_unit(u):
    return np.clip(u, U_CLIP, 1.0 - U_CLIP)


def _check_phi(phi):
    if np.any(np.abs(phi) >= 1):
        raise InvalidInputError("Copula correlation must satisfy |phi| < 1")


def _check_unit(*arrays):
    for u in arrays:
        u = np.asarray(u)
        if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
            raise InvalidInputError("Copula arguments must lie in [0, 1]")


def t_logpdf(x, v):
    """Log density of the standard (unscaled) t distribution"""
    return (gammaln((v + 1.0) / 2.0) - gammaln(v / 2.0) - 0.5 * np.log(v * np.pi)
            - (v + 1.0) / 2.0 * np.log1p(x * x / v))


def bvt_logpdf(x, y, v, phi):
    one_minus = 1.0 - phi * phi
    quad = (x * x + y * y - 2.0 * phi * x * y) / (v * one_minus)
    return -np.log(2.0 * np.pi) - 0.5 * np.log(one_minus) - (v + 2.0) / 2.0 * np.log1p(quad)


def bvt_density(x, y, v, phi):
    """Bivariate t density with v dof and correlation phi"""
    _check_phi(phi)
    return np.exp(bvt_logpdf(np.asarray(x, dtype=float), np.asarray(y, dtype=float), v, phi))


def tcopula_logpdf(u_x, u_y, v, phi):
    """Log t-copula density; u arguments are clipped away from 0 and 1"""
    x = stdtrit(v, clip_unit(u_x))
    y = stdtrit(v, clip_unit(u_y))
    return bvt_logpdf(x, y, v, phi) - t_logpdf(x, v) - t_logpdf(y, v)


def tcopula_density(u_x, u_y, v, phi):
    u_x = np.asarray(u_x, dtype=float)
    u_y = np.asarray(u_y, dtype=float)
    if np.any((u_x <= 0) | (u_x >= 1) | (u_y <= 0) | (u_y >= 1)):
        raise InvalidInputError("Copula density is defined on the open unit square")
    _check_phi(phi)
    return np.exp(tcopula_logpdf(u_x, u_y, v, phi))


def h_func(u_x, u_y, v, phi):
    """
    Conditional CDF of X given Y = y for the t copula:
    t_{v+1}((x - phi y) / sqrt((v + y^2)(1 - phi^2) / (v + 1)))
    """
    _check_unit(u_x, u_y)
    _check_phi(phi)
    x = stdtrit(v, clip_unit(u_x))
    y = stdtrit(v, clip_unit(u_y))
    scale = np.sqrt((v + y * y) * (1.0 - phi * phi) / (v + 1.0))
    return clip_unit(stdtr(v + 1.0, (x - phi * y) / scale))


def h_inv(u, u_y, v, phi):
    """Inverse of h_func in its first argument"""
    _check_unit(u, u_y)
    _check_phi(phi)
    z = stdtrit(v + 1.0, clip_unit(u))
    y = stdtrit(v, clip_unit(u_y))
    scale = np.sqrt((v + y * y) * (1.0 - phi * phi) / (v + 1.0))
    return clip_unit(stdtr(v, z * scale + phi * y))


@dataclass(frozen=True)
class DynCorrState:
    """
    Correlation recursion state: phi is the last correlation used, the
    histories hold the most recent t-scale residuals (oldest first).
    phi and history entries may be arrays to run many copulas at once.
    """
    phi: np.ndarray
    history_x: Tuple[np.ndarray, ...] = ()
    history_y: Tuple[np.ndarray, ...] = ()


def initial_state(params: CopulaParams) -> DynCorrState:
    return DynCorrState(phi=np.asarray(params.phi_bar, dtype=float))


def sample_corr(history_x: Sequence, history_y: Sequence):
    """Un-centered correlation of the stored residuals; 0 when a history is all zero"""
    hx = np.asarray(history_x, dtype=float)
    hy = np.asarray(history_y, dtype=float)
    num = np.sum(hx * hy, axis=0)
    den = np.sqrt(np.sum(hx * hx, axis=0) * np.sum(hy * hy, axis=0))
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def _recursion(params, xi, phi_prev):
    return (1.0 - params.a - params.b) * params.phi_bar + params.a * xi + params.b * phi_prev


def next_correlation(state: DynCorrState, params, m_sc: int = DEFAULT_M_SC):
    """phi for the coming day; xi falls back to phi_bar until m_sc residuals are stored"""
    if len(state.history_x) < m_sc:
        xi = np.asarray(params.phi_bar, dtype=float)
    else:
        xi = sample_corr(state.history_x[-m_sc:], state.history_y[-m_sc:])
    return np.clip(_recursion(params, xi, state.phi), -PHI_MAX, PHI_MAX)


def dyn_corr_step(state: DynCorrState, params, new_xy, m_sc: int = DEFAULT_M_SC) -> DynCorrState:
    """
    Advance one day: phi_t from the stored history and phi_{t-1}, then append
    the day's residual pair (x, y) and keep the last m_sc.
    """
    phi = next_correlation(state, params, m_sc)
    new_x, new_y = new_xy
    history_x = (state.history_x + (np.asarray(new_x, dtype=float),))[-m_sc:]
    history_y = (state.history_y + (np.asarray(new_y, dtype=float),))[-m_sc:]
    return DynCorrState(phi=phi, history_x=history_x, history_y=history_y)


def correlation_path(resid_x: np.ndarray, resid_y: np.ndarray, params: CopulaParams,
                     m_sc: int = DEFAULT_M_SC) -> np.ndarray:
    """
    phi for days 0..T given the t-scale residual series of length T.

    Entry t is the correlation used on day t; entry T is the one-day-ahead
    value. Same numbers as iterating dyn_corr_step from initial_state.
    """
    T = resid_x.shape[0]
    xi = np.full(T + 1, params.phi_bar, dtype=float)
    if T >= m_sc:
        num = sliding_window_view(resid_x * resid_y, m_sc).sum(axis=-1)
        sx = sliding_window_view(resid_x * resid_x, m_sc).sum(axis=-1)
        sy = sliding_window_view(resid_y * resid_y, m_sc).sum(axis=-1)
        den = np.sqrt(sx * sy)
        xi[m_sc:] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    drive = (1.0 - params.a - params.b) * params.phi_bar + params.a * xi
    phi, _ = lfilter([1.0], [1.0, -params.b], drive, zi=[params.b * params.phi_bar])
    return np.clip(phi, -PHI_MAX, PHI_MAX)


def copula_series(u_x: np.ndarray, u_y: np.ndarray, params: CopulaParams, m_sc: int = DEFAULT_M_SC):
    """
    Run one dynamic copula over a whole sample.

    Returns:
        (log densities per day, correlation path of length T+1, h values F(x | y) per day)
    """
    v = params.v
    x = stdtrit(v, clip_unit(u_x))
    y = stdtrit(v, clip_unit(u_y))
    phi = correlation_path(x, y, params, m_sc)
    today = phi[:-1]
    logc = bvt_logpdf(x, y, v, today) - t_logpdf(x, v) - t_logpdf(y, v)
    scale = np.sqrt((v + y * y) * (1.0 - today * today) / (v + 1.0))
    h = clip_unit(stdtr(v + 1.0, (x - today * y) / scale))
    return logc, phi, h


def tail_dependence(phi, v):
    """lambda = 2 t_{v+1}(-sqrt((v+1)(1-phi)/(1+phi))); 0 at phi=-1, 1 at phi=1"""
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(phi) > 1):
        raise InvalidInputError("Correlation must lie in [-1, 1]")
    safe = np.clip(phi, -PHI_MAX, 1.0)
    lam = 2.0 * stdtr(v + 1.0, -np.sqrt((v + 1.0) * (1.0 - safe) / (1.0 + safe)))
    lam = np.where(phi <= -1, 0.0, lam)
    return lam if lam.ndim else float(lam)


def uncond_corr(phi_xy_z, phi_xzj_zmj, phi_yzj_zmj):
    """Remove one conditioning variable z_j from a partial correlation"""
    for value in (phi_xy_z, phi_xzj_zmj, phi_yzj_zmj):
        if np.any(np.abs(value) >= 1):
            raise InvalidInputError("Correlations must lie in (-1, 1)")
    return (phi_xy_z * np.sqrt((1.0 - phi_xzj_zmj ** 2) * (1.0 - phi_yzj_zmj ** 2))
            + phi_xzj_zmj * phi_yzj_zmj)


def unconditional_correlation(phi_xy_z: float, chain: Sequence[Tuple[float, float]]) -> float:
    """
    Apply uncond_corr repeatedly. chain lists (phi_{x z_j | z_-j}, phi_{y z_j | z_-j})
    from the last conditioning variable back to the first.
    """
    phi = phi_xy_z
    for phi_x, phi_y in chain:
        phi = uncond_corr(phi, phi_x, phi_y)
    return float(phi)
