"""Two-factor commodity model: spot price with mean-reverting convenience yield.

Under the pricing measure

    dS = (r - delta) S dt + sigma1 S dW1
    d delta = (kappa (alpha - delta) - lambda) dt + sigma2 dW2,   d<W1, W2> = rho dt.

``(log S, delta)`` is a Gaussian (affine) process, so paths are generated
from the exact conditional law between grid points instead of an Euler step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CommodityParams
from .rng import Substreams


@dataclass
class CommodityPathSet:
    """Simulated spot and convenience-yield paths, shape ``(n_paths, n_grid)``.

    ``increments`` optionally holds the driving Brownian increments
    ``(dW1, dW2)`` per step, shape ``(n_paths, n_grid - 1, 2)``.
    """

    grid: np.ndarray
    spot: np.ndarray
    delta: np.ndarray
    increments: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.spot.shape[0]

    def relative_spot(self) -> np.ndarray:
        return self.spot / self.spot[:, :1]


def validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("time grid must be a non-empty 1-d array")
    if grid[0] != 0.0:
        raise ValueError(f"time grid must start at 0, got {grid[0]!r}")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        bad = int(np.argmax(np.diff(grid) <= 0))
        raise ValueError(f"time grid must be strictly increasing (violated between index {bad} and {bad + 1})")
    return grid


def _shock_cov(dt: float, kappa: float, rho: float) -> np.ndarray:
    """Covariance of ``(W1(dt), W2(dt), int_0^dt exp(-kappa (dt - u)) dW2(u))``."""
    e1 = -np.expm1(-kappa * dt) / kappa
    e2 = -np.expm1(-2.0 * kappa * dt) / (2.0 * kappa)
    return np.array(
        [
            [dt, rho * dt, rho * e1],
            [rho * dt, dt, e1],
            [rho * e1, e1, e2],
        ]
    )


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # |rho| = 1 makes the covariance singular
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def simulate_two_factor(
    params: CommodityParams,
    r: float,
    grid,
    n_paths: int,
    rng_stream: Substreams,
    keep_increments: bool = False,
) -> CommodityPathSet:
    """Simulate ``n_paths`` paths of the two-factor model on ``grid``.

    Three standard normals per step drive the exact transition: the two
    Brownian increments and the exponentially weighted integral of ``W2``
    that carries the convenience yield's mean reversion.
    """
    grid = validate_grid(grid)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if abs(params.rho) > 1:
        raise ValueError(f"correlation rho={params.rho} outside [-1, 1]")

    n_steps = grid.size - 1
    kappa, s1, s2 = params.kappa, params.sigma1, params.sigma2
    a_star = params.alpha_star

    z = np.empty((n_paths, n_steps, 3))
    for i in range(n_paths):
        z[i] = rng_stream.generator(i).standard_normal((n_steps, 3))

    dts = np.diff(grid)
    uniq, inverse = np.unique(np.round(dts, 15), return_inverse=True)
    roots = np.stack([_sqrt_psd(_shock_cov(dt, kappa, params.rho)) for dt in uniq]) if n_steps else np.empty((0, 3, 3))
    shocks = np.einsum("sij,psj->psi", roots[inverse], z) if n_steps else z

    log_s = np.empty((n_paths, grid.size))
    delta = np.empty((n_paths, grid.size))
    log_s[:, 0] = np.log(params.s0)
    delta[:, 0] = params.delta0
    for k in range(n_steps):
        dt = dts[k]
        decay = np.exp(-kappa * dt)
        gap = delta[:, k] - a_star
        dw1, dw2, i1 = shocks[:, k, 0], shocks[:, k, 1], shocks[:, k, 2]
        delta[:, k + 1] = a_star + gap * decay + s2 * i1
        log_s[:, k + 1] = (
            log_s[:, k]
            + (r - a_star - 0.5 * s1 * s1) * dt
            - gap * (1.0 - decay) / kappa
            + s1 * dw1
            - (s2 / kappa) * (dw2 - i1)
        )

    increments = shocks[:, :, :2].copy() if keep_increments else None
    return CommodityPathSet(grid=grid, spot=np.exp(log_s), delta=delta, increments=increments)


def log_spot_moments(params: CommodityParams, r: float, t) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of ``log S_t`` given the initial state."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    k, s1, s2, rho = params.kappa, params.sigma1, params.sigma2, params.rho
    a_star = params.alpha_star
    e1 = -np.expm1(-k * t) / k
    e2 = -np.expm1(-2.0 * k * t) / (2.0 * k)
    mean = np.log(params.s0) + (r - a_star - 0.5 * s1 * s1) * t - (params.delta0 - a_star) * e1
    # integrals of (1 - e^{-ks})^2 and (1 - e^{-ks}) over [0, t]
    int_sq = t - 2.0 * e1 + e2
    int_lin = t - e1
    var = s1 * s1 * t + (s2 / k) ** 2 * int_sq - 2.0 * rho * s1 * s2 / k * int_lin
    return mean, np.maximum(var, 0.0)


def expected_spot(params: CommodityParams, r: float, t):
    """``E[S_t]`` under the pricing measure, via the lognormal moment formula."""
    mean, var = log_spot_moments(params, r, t)
    out = np.exp(mean + 0.5 * var)
    return float(out) if np.ndim(out) == 0 else out


def mean_relative_spot_curve(params: CommodityParams, r: float, grid) -> np.ndarray:
    """``E[S_t / S_0]`` on ``grid``; the deterministic feeding-cost driver."""
    grid = validate_grid(grid)
    return np.asarray(expected_spot(params, r, grid)) / params.s0
