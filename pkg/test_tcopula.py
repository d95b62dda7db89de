#!/usr/bin/env python3
"""Tests for the bivariate t-copula kernel and the correlation recursion"""
import numpy as np
import pytest
from scipy.integrate import quad

from data_model import CopulaParams, InvalidInputError
from tcopula import (bvt_density, correlation_path, dyn_corr_step, h_func, h_inv, initial_state, next_correlation,
                     tail_dependence, tcopula_density, uncond_corr, unconditional_correlation)


@pytest.mark.parametrize("v", [3.0, 5.0, 10.0])
@pytest.mark.parametrize("phi", [-0.9, 0.0, 0.9])
def test_density_integrates_to_one_in_first_argument(v, phi):
    for u_y in (0.2, 0.5, 0.8):
        mass, _ = quad(lambda u: tcopula_density(u, u_y, v, phi), 0.0, 1.0, points=sorted({u_y, 1.0 - u_y}), limit=200)
        assert mass == pytest.approx(1.0, abs=1e-4)


def test_density_is_exchangeable():
    assert tcopula_density(0.3, 0.7, 5.0, 0.0) == pytest.approx(tcopula_density(0.7, 0.3, 5.0, 0.0))


def test_density_rejects_boundary_and_bad_phi():
    with pytest.raises(InvalidInputError):
        tcopula_density(0.0, 0.5, 5.0, 0.3)
    with pytest.raises(InvalidInputError):
        tcopula_density(0.4, 0.5, 5.0, 1.0)


@pytest.mark.parametrize("phi", [-0.6, 0.0, 0.75])
def test_h_derivative_is_density(phi):
    v, eps = 6.0, 1e-6
    for u_x, u_y in ((0.3, 0.6), (0.8, 0.1), (0.5, 0.5)):
        slope = (h_func(u_x + eps, u_y, v, phi) - h_func(u_x - eps, u_y, v, phi)) / (2 * eps)
        assert slope == pytest.approx(tcopula_density(u_x, u_y, v, phi), rel=1e-4)


def test_h_inverse():
    u = np.linspace(0.02, 0.98, 13)
    for u_y in (0.1, 0.5, 0.93):
        w = h_func(u, u_y, 4.0, 0.55)
        assert h_inv(w, u_y, 4.0, 0.55) == pytest.approx(u, abs=1e-9)


def test_h_is_increasing_and_bounded():
    u = np.linspace(0.01, 0.99, 50)
    h = h_func(u, 0.3, 5.0, -0.4)
    assert np.all(np.diff(h) > 0)
    assert np.all((h > 0) & (h < 1))
    with pytest.raises(InvalidInputError):
        h_func(1.5, 0.3, 5.0, 0.0)


def test_tail_dependence_limits_and_monotone():
    assert tail_dependence(1.0, 5.0) == pytest.approx(1.0)
    assert tail_dependence(-1.0, 5.0) == 0.0
    lam = tail_dependence(np.array([-0.5, 0.0, 0.5, 0.9]), 5.0)
    assert np.all(np.diff(lam) > 0)
    assert tail_dependence(0.5, 30.0) < tail_dependence(0.5, 4.0)
    with pytest.raises(InvalidInputError):
        tail_dependence(1.2, 5.0)


def test_correlation_path_matches_step_recursion():
    params = CopulaParams(0.4, 0.05, 0.9, 6.0)
    rng = np.random.default_rng(7)
    x, y = rng.standard_normal(30), rng.standard_normal(30)
    path = correlation_path(x, y, params, m_sc=3)
    assert path.shape == (31,)
    assert path[0] == pytest.approx(params.phi_bar)

    state = initial_state(params)
    stepped = []
    for t in range(30):
        state = dyn_corr_step(state, params, (x[t], y[t]), m_sc=3)
        stepped.append(float(state.phi))
    stepped.append(float(next_correlation(state, params, m_sc=3)))
    assert path == pytest.approx(stepped, abs=1e-12)


def test_static_copula_keeps_phi_bar():
    params = CopulaParams(-0.3, 0.0, 0.0, 8.0)
    rng = np.random.default_rng(1)
    path = correlation_path(rng.standard_normal(20), rng.standard_normal(20), params)
    assert path == pytest.approx(np.full(21, -0.3))


def test_uncond_corr():
    assert uncond_corr(0.3, 0.0, 0.0) == pytest.approx(0.3)
    assert uncond_corr(0.0, 0.5, 0.4) == pytest.approx(0.2)
    assert uncond_corr(0.5, 0.6, 0.8) == pytest.approx(0.5 * 0.8 * 0.6 + 0.48)
    assert unconditional_correlation(0.3, [(0.0, 0.0), (0.5, 0.4)]) == pytest.approx(
        uncond_corr(0.3, 0.5, 0.4))
    with pytest.raises(InvalidInputError):
        uncond_corr(1.0, 0.1, 0.1)


def test_bvt_density_origin_and_symmetry():
    v = 5.0
    # at the origin with phi=0 the bivariate t density is 1/(2 pi)
    assert bvt_density(0.0, 0.0, v, 0.0) == pytest.approx(1.0 / (2.0 * np.pi))
    assert bvt_density(0.7, -0.2, v, 0.4) == pytest.approx(bvt_density(-0.2, 0.7, v, 0.4))
    with pytest.raises(InvalidInputError):
        bvt_density(0.0, 0.0, v, 1.0)
