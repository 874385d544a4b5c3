import numpy as np
import pytest
from scipy.integrate import solve_ivp

from aquaharvest.commodity import (
    expected_spot,
    log_spot_moments,
    mean_relative_spot_curve,
    simulate_two_factor,
)
from aquaharvest.config import CommodityParams, salmon_params, soy_params
from aquaharvest.rng import EVAL, SALMON, SOY, Substreams

R = 0.0303


def moment_ode_oracle(p: CommodityParams, r: float, t: float):
    """Integrate the linear ODEs for the first two moments of (log S, delta)."""
    a_star = p.alpha - p.lambda_rp / p.kappa

    def rhs(_, y):
        mx, md, vx, cxd, vd = y
        return [
            r - md - 0.5 * p.sigma1**2,
            p.kappa * (a_star - md),
            p.sigma1**2 - 2.0 * cxd,
            p.rho * p.sigma1 * p.sigma2 - vd - p.kappa * cxd,
            p.sigma2**2 - 2.0 * p.kappa * vd,
        ]

    sol = solve_ivp(rhs, (0.0, t), [np.log(p.s0), p.delta0, 0.0, 0.0, 0.0], rtol=1e-11, atol=1e-12)
    return sol.y[0, -1], sol.y[2, -1]


def noiseless(s0=2.0, alpha=0.04):
    return CommodityParams(sigma1=0.0, sigma2=0.0, kappa=1.5, alpha=alpha, lambda_rp=0.0, rho=0.3, s0=s0, delta0=alpha)


@pytest.mark.parametrize("params", [salmon_params(), soy_params()], ids=["salmon", "soy"])
@pytest.mark.parametrize("t", [0.25, 1.0, 2.0, 3.0])
def test_log_moments_match_moment_ode(params, t):
    mean, var = log_spot_moments(params, R, t)
    m_ref, v_ref = moment_ode_oracle(params, R, t)
    assert mean == pytest.approx(m_ref, rel=1e-8, abs=1e-9)
    assert var == pytest.approx(v_ref, rel=1e-8)


def test_expected_spot_limits():
    p = salmon_params()
    assert expected_spot(p, R, 0.0) == pytest.approx(p.s0, rel=1e-14)
    q = noiseless()
    t = np.array([0.5, 1.0, 3.0])
    np.testing.assert_allclose(expected_spot(q, R, t), q.s0 * np.exp((R - q.alpha) * t), rtol=1e-13)
    np.testing.assert_allclose(mean_relative_spot_curve(q, R, np.r_[0.0, t]), np.exp((R - q.alpha) * np.r_[0, t]))


def test_noiseless_paths_are_exact():
    q = noiseless()
    grid = np.linspace(0, 3, 37)
    paths = simulate_two_factor(q, R, grid, 4, Substreams(0))
    np.testing.assert_allclose(paths.spot, np.broadcast_to(q.s0 * np.exp((R - q.alpha) * grid), (4, 37)), rtol=1e-13)
    np.testing.assert_allclose(paths.delta, q.alpha, rtol=1e-14)


def test_increment_correlation_salmon():
    grid = np.linspace(0, 3, 73)
    paths = simulate_two_factor(salmon_params(), R, grid, 2**14, Substreams(3, EVAL, SALMON), keep_increments=True)
    inc = paths.increments.reshape(-1, 2)
    assert np.corrcoef(inc.T)[0, 1] == pytest.approx(0.9, abs=0.02)


def test_log_moments_statistical():
    p = salmon_params()
    grid = np.array([0.0, 1.0, 3.0])
    n = 2**14
    logs = np.log(simulate_two_factor(p, R, grid, n, Substreams(9, EVAL, SALMON)).spot[:, 1:])
    mean, var = log_spot_moments(p, R, grid[1:])
    se_mean = np.sqrt(var / n)
    assert np.all(np.abs(logs.mean(axis=0) - mean) < 3.5 * se_mean)
    # variance of a normal sample variance is 2 var^2 / (n - 1)
    assert np.all(np.abs(logs.var(axis=0, ddof=1) - var) < 3.5 * var * np.sqrt(2 / (n - 1)))


def test_soy_expected_spot_within_three_stderr():
    p = soy_params()
    grid = np.linspace(0, 3, 13)
    spot = simulate_two_factor(p, R, grid, 20 * 2**12, Substreams(2024, EVAL, SOY)).spot
    for k in (4, 8, 12):
        mc = spot[:, k].mean()
        se = spot[:, k].std(ddof=1) / np.sqrt(spot.shape[0])
        assert abs(mc - expected_spot(p, R, grid[k])) < 3 * se


def test_commodities_independent():
    grid = np.linspace(0, 1, 13)
    base = Substreams(4, EVAL)
    a = simulate_two_factor(salmon_params(), R, grid, 4096, base.for_component(SALMON), keep_increments=True)
    b = simulate_two_factor(soy_params(), R, grid, 4096, base.for_component(SOY), keep_increments=True)
    x = a.increments[:, :, 0].ravel()
    y = b.increments[:, :, 0].ravel()
    assert abs(np.corrcoef(x, y)[0, 1]) < 3 / np.sqrt(x.size)


def test_positivity_and_reproducibility():
    grid = np.linspace(0, 3, 73)
    a = simulate_two_factor(soy_params(), R, grid, 64, Substreams(1))
    b = simulate_two_factor(soy_params(), R, grid, 64, Substreams(1))
    assert np.all(a.spot > 0)
    assert np.array_equal(a.spot, b.spot) and np.array_equal(a.delta, b.delta)
    np.testing.assert_allclose(a.relative_spot()[:, 0], 1.0)


def test_path_prefix_independent_of_count():
    grid = np.linspace(0, 1, 11)
    a = simulate_two_factor(salmon_params(), R, grid, 8, Substreams(1))
    b = simulate_two_factor(salmon_params(), R, grid, 3, Substreams(1))
    assert np.array_equal(a.spot[:3], b.spot)


@pytest.mark.parametrize("grid", [[0.1, 0.5], [0.0, 0.5, 0.5], [0.0, 1.0, 0.5]])
def test_bad_grid_rejected(grid):
    with pytest.raises(ValueError):
        simulate_two_factor(salmon_params(), R, np.array(grid), 2, Substreams(0))
