"""Calibration of the host-parasite model to lice counts and removal counts.

Two steps: the lice reproduction rate is fitted by nonlinear least squares
to lice-per-fish observations before the first treatment, where the model
is deterministic; the beta parameters of the treatment effect are then
fitted by matching the mean and standard deviation of the cumulative
treatment count at one or more times.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .biology import integrate_deterministic, simulate_host_parasite
from .config import BioParams, ThresholdFn
from .ingest import GreenSegment, RemovalDistribution
from .rng import CALIBRATE, BIOLOGY, Substreams

__all__ = [
    "LambdaFitResult",
    "BetaFitResult",
    "euler_grid",
    "fit_lambda",
    "fit_beta",
    "model_lice_per_fish",
    "removal_moments",
]


@dataclass
class LambdaFitResult:
    lambda_rep: float
    sse: float
    n_points: int
    grid_dt: float
    converged: bool = True
    message: str = ""


@dataclass
class BetaFitResult:
    beta1: float
    beta2: float
    objective: float
    zeta: float
    t_match: tuple[float, ...]
    n_paths: int
    model_mean: tuple[float, ...] = ()
    model_std: tuple[float, ...] = ()
    at_bound: bool = False
    seed: int = 0


def euler_grid(T: float, N: int) -> np.ndarray:
    """Uniform grid on ``[0, T]`` with step ``T / (10 N - 1)`` (``10 N`` points)."""
    if T <= 0 or N < 1:
        raise ValueError("need T > 0 and N >= 1")
    return np.linspace(0.0, T, 10 * N)


def _extended_grid(grid: np.ndarray, t_max: float) -> np.ndarray:
    dt = grid[1] - grid[0]
    if t_max <= grid[-1]:
        return grid
    n = int(np.ceil(t_max / dt)) + 1
    return dt * np.arange(n)


def model_lice_per_fish(bio: BioParams, grid, times) -> np.ndarray:
    """Treatment-free model lice per fish, linearly interpolated onto ``times``."""
    grid = _extended_grid(np.asarray(grid, dtype=float), float(np.max(times, initial=0.0)))
    h, p = integrate_deterministic(bio, grid)
    return np.interp(times, grid, p / h)


def fit_lambda(
    segments: Sequence[GreenSegment],
    bio: BioParams,
    grid=None,
    lambda_max: float = 50.0,
) -> LambdaFitResult:
    """Least-squares fit of the lice reproduction rate to green segments.

    The remaining biological parameters stay fixed at ``bio``. A coarse scan
    over ``(0, lambda_max]`` picks the start for a bounded trust-region
    solve.
    """
    segs = [s for s in segments if len(s.times)]
    if not segs:
        raise ValueError("no non-empty green segments to fit")
    grid = euler_grid(3.0, 72) if grid is None else np.asarray(grid, dtype=float)
    times = np.concatenate([np.asarray(s.times, dtype=float) for s in segs])
    data = np.concatenate([np.asarray(s.lpf, dtype=float) for s in segs])
    fine = _extended_grid(grid, float(times.max()))

    def residuals(x):
        model = model_lice_per_fish(dataclasses.replace(bio, lambda_rep=float(x[0])), fine, times)
        res = model - data
        # an exploding trajectory is a bad fit, not a failure
        return np.where(np.isfinite(res), res, 1e6)

    scan = np.geomspace(1e-2, lambda_max, 60)
    sse = [float(np.sum(residuals([x]) ** 2)) for x in scan]
    x0 = scan[int(np.argmin(sse))]
    sol = least_squares(
        residuals, x0=[x0], bounds=([1e-8], [lambda_max]), method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12
    )
    if not sol.success:
        warnings.warn(f"lambda fit did not converge: {sol.message}; returning best iterate", RuntimeWarning)
    return LambdaFitResult(
        lambda_rep=float(sol.x[0]),
        sse=float(np.sum(sol.fun**2)),
        n_points=int(times.size),
        grid_dt=float(grid[1] - grid[0]),
        converged=bool(sol.success),
        message=str(sol.message),
    )


def removal_moments(
    bio: BioParams,
    threshold: ThresholdFn,
    grid,
    t_match: Sequence[float],
    n_paths: int,
    streams: Substreams,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of the model's cumulative treatment count at ``t_match``."""
    grid = np.asarray(grid, dtype=float)
    t_max = max(t_match)
    if t_max <= grid[-1]:
        cut = int(np.searchsorted(grid, t_max + 1e-12, side="right"))
        sub = grid[: max(cut, 2)]
    else:
        sub = _extended_grid(grid, t_max)
    paths = simulate_host_parasite(bio, threshold, sub, n_paths, streams, keep_paths=False)
    counts = np.stack([paths.removals_at(t) for t in t_match]).astype(float)
    return counts.mean(axis=1), counts.std(axis=1)


def fit_beta(
    target: RemovalDistribution | Sequence[RemovalDistribution],
    bio: BioParams,
    threshold: ThresholdFn,
    grid=None,
    n_paths: int = 1000,
    zeta: float = 2.0,
    seed: int = 0,
    beta_max: float = 10.0,
    starts: Sequence[tuple[float, float]] = ((1.0, 1.0), (0.1, 0.05), (0.5, 2.0)),
) -> BetaFitResult:
    """Fit the treatment-effect beta parameters by moment matching.

    Minimises ``sum_t (mean N_t - mean R_t)^2 + zeta (std N_t - std R_t)^2``
    over ``(beta1, beta2)`` in ``(0, beta_max]^2`` with a bounded
    Nelder-Mead search. The same uniforms are reused for every evaluation,
    so the objective is a deterministic function of the parameters.
    """
    targets = [target] if isinstance(target, RemovalDistribution) else list(target)
    if not targets:
        raise ValueError("need at least one target distribution")
    for tg in targets:
        if tg.std == 0:
            raise ValueError(f"target at t={tg.t} has zero spread; moment matching is degenerate")
    if zeta <= 0:
        raise ValueError("zeta must be > 0")
    grid = euler_grid(3.0, 72) if grid is None else np.asarray(grid, dtype=float)
    t_match = tuple(float(tg.t) for tg in targets)
    tmean = np.array([tg.mean for tg in targets])
    tstd = np.array([tg.std for tg in targets])
    streams = Substreams(seed, CALIBRATE, BIOLOGY)
    lo = 1e-4

    def moments(x):
        b = dataclasses.replace(bio, beta1=float(x[0]), beta2=float(x[1]))
        return removal_moments(b, threshold, grid, t_match, n_paths, streams)

    def objective(x):
        if np.any(x < lo) or np.any(x > beta_max):
            return 1e12
        m, s = moments(x)
        return float(np.sum((m - tmean) ** 2 + zeta * (s - tstd) ** 2))

    best = None
    for x0 in starts:
        res = minimize(
            objective,
            x0=np.clip(np.asarray(x0, dtype=float), lo, beta_max),
            method="Nelder-Mead",
            bounds=[(lo, beta_max), (lo, beta_max)],
            options={"fatol": 1e-6, "xatol": 1e-6, "maxfev": 400},
        )
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    m, s = moments(x)
    at_bound = bool(np.any(np.isclose(x, lo, rtol=1e-3)) or np.any(np.isclose(x, beta_max, rtol=1e-3)))
    if at_bound:
        warnings.warn(f"beta fit ended on the search box boundary at {x}", RuntimeWarning)
    return BetaFitResult(
        beta1=float(x[0]),
        beta2=float(x[1]),
        objective=float(best.fun),
        zeta=zeta,
        t_match=t_match,
        n_paths=n_paths,
        model_mean=tuple(float(v) for v in m),
        model_std=tuple(float(v) for v in s),
        at_bound=at_bound,
        seed=seed,
    )
