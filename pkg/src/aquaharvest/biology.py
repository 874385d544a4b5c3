"""Fish growth, deterministic mortality and the host-parasite treatment model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

from .config import BioParams, GrowthParams, ThresholdFn
from .rng import Substreams


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    return t


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def bertalanffy_weight(t, g: GrowthParams):
    """Weight per fish in kg, ``w_inf (a - b e^{-ct})^3``."""
    t = _check_time(t)
    return _scalar_or_array(g.w_inf * (g.a - g.b * np.exp(-g.c * t)) ** 3)


def bertalanffy_weight_rate(t, g: GrowthParams):
    """Time derivative of :func:`bertalanffy_weight` in kg per fish per year."""
    t = _check_time(t)
    e = np.exp(-g.c * t)
    return _scalar_or_array(3.0 * g.w_inf * (g.a - g.b * e) ** 2 * g.b * g.c * e)


def deterministic_host(t, H0: float, m: float):
    """Fish count under a constant mortality rate ``m``."""
    t = _check_time(t)
    if H0 <= 0:
        raise ValueError("H0 must be > 0")
    if m < 0:
        raise ValueError("mortality rate must be >= 0")
    return _scalar_or_array(H0 * np.exp(-m * t))


def biomass(host, weight):
    """Total farm biomass in kg; both curves must live on the same grid."""
    host = np.asarray(host, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if host.shape[-1:] != weight.shape[-1:] and host.ndim and weight.ndim:
        raise ValueError(f"grid mismatch: host has {host.shape[-1]} points, weight has {weight.shape[-1]}")
    return host * weight


@dataclass(frozen=True)
class TreatmentEvent:
    time: float
    x_factor: float
    y_factor: float


@dataclass
class HostParasitePathSet:
    """Simulated host/parasite paths on a uniform Euler grid.

    Treatment events are stored column-wise (``event_path``, ``event_step``,
    ``event_x``, ``event_y``) ordered by step; :meth:`events` rebuilds the
    per-path event list.
    """

    grid: np.ndarray
    host: np.ndarray
    parasite: np.ndarray
    removals: np.ndarray
    event_path: np.ndarray
    event_step: np.ndarray
    event_x: np.ndarray
    event_y: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.host.shape[0]

    @property
    def lice_per_fish(self) -> np.ndarray:
        return self.parasite / self.host

    def events(self, path: int) -> list[TreatmentEvent]:
        sel = np.flatnonzero(self.event_path == path)
        return [
            TreatmentEvent(float(self.grid[self.event_step[i]]), float(self.event_x[i]), float(self.event_y[i]))
            for i in sel
        ]

    def removals_at(self, t: float) -> np.ndarray:
        """``N_t`` for every path: number of events at grid times ``<= t``."""
        idx = np.searchsorted(self.grid, t + 1e-12, side="right") - 1
        if idx < 0:
            return np.zeros(self.n_paths, dtype=self.removals.dtype)
        return self.removals[:, idx]


def check_uniform_grid(grid, rtol: float = 1e-9) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("Euler grid needs at least two points")
    if grid[0] != 0.0:
        raise ValueError("Euler grid must start at 0")
    d = np.diff(grid)
    if np.any(d <= 0) or not np.allclose(d, d[0], rtol=rtol, atol=0.0):
        raise ValueError("Euler grid must have a constant positive step")
    return grid


def _euler_step(h, p, dt, bio: BioParams):
    ratio = p / h
    dh = -(bio.mu + bio.alpha_inf * ratio) * h
    dp = (bio.lambda_rep * h / bio.H0 - (bio.b_lice + bio.mu) - bio.alpha_inf * ratio) * p
    return h + dt * dh, p + dt * dp


def integrate_deterministic(bio: BioParams, grid) -> tuple[np.ndarray, np.ndarray]:
    """Explicit Euler solution of the host-parasite ODE without treatments."""
    grid = check_uniform_grid(grid)
    dt = grid[1] - grid[0]
    h = np.empty(grid.size)
    p = np.empty(grid.size)
    h[0], p[0] = bio.H0, bio.P0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.size - 1):
            h[k + 1], p[k + 1] = _euler_step(h[k], p[k], dt, bio)
    return h, p


class _UniformBuffers:
    """Per-path uniform draws for treatment effects, extended on demand.

    Column 0 drives the lice survival factor, column 1 the host survival
    factor. Doubling a buffer re-draws from the same substream, and the new
    buffer extends the old one, so the k-th event of a path always sees the
    same pair of uniforms.
    """

    def __init__(self, streams: Substreams, n_paths: int, size: int = 32):
        self.streams = streams
        self.n_paths = n_paths
        self._fill(size)

    def _fill(self, size: int) -> None:
        self.size = size
        self.u = np.empty((self.n_paths, size, 2))
        for i in range(self.n_paths):
            self.u[i] = self.streams.generator(i).random((size, 2))

    def take(self, paths: np.ndarray, counts: np.ndarray) -> np.ndarray:
        if counts.size and counts.max() >= self.size:
            self._fill(max(2 * self.size, int(counts.max()) + 1))
        return self.u[paths, counts]


def lice_survival(u, beta1: float, beta2: float):
    """Map uniforms to lice survival factors in ``[0.1, 0.9]`` by inverse CDF."""
    return 0.1 + 0.8 * betaincinv(beta1, beta2, u)


def simulate_host_parasite(
    bio: BioParams,
    threshold: ThresholdFn,
    grid,
    n_paths: int,
    rng_stream: Substreams,
    keep_paths: bool = True,
) -> HostParasitePathSet:
    """Euler simulation with a treatment whenever lice per fish reaches the threshold.

    Treatments are checked at grid points after each Euler step. A treatment
    multiplies parasites by ``Y`` and hosts by ``X`` and may fire again at the
    next grid point if the ratio is still above the threshold. With
    ``keep_paths=False`` only the final state and the removal counts are kept
    (host/parasite arrays then hold only the first and last grid point).
    """
    grid = check_uniform_grid(grid)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if bio.lpf0 >= threshold(0.0):
        raise ValueError(f"initial lice per fish {bio.lpf0} must lie below the threshold {threshold(0.0)}")
    dt = grid[1] - grid[0]
    n_grid = grid.size
    lvals = np.asarray(threshold(grid), dtype=float)

    h = np.full(n_paths, float(bio.H0))
    p = np.full(n_paths, float(bio.P0))
    counts = np.zeros(n_paths, dtype=np.int32)
    removals = np.zeros((n_paths, n_grid), dtype=np.int32)
    if keep_paths:
        host = np.empty((n_paths, n_grid))
        parasite = np.empty((n_paths, n_grid))
        host[:, 0], parasite[:, 0] = h, p

    buffers = _UniformBuffers(rng_stream, n_paths)
    ev_path, ev_step, ev_x, ev_y = [], [], [], []
    coarse = False
    span = 1.0 - bio.x_low
    for k in range(1, n_grid):
        h, p = _euler_step(h, p, dt, bio)
        ratio = p / h
        lk = lvals[k]
        if not coarse and np.any(ratio > 2.0 * lk):
            coarse = True
            warnings.warn(
                f"lice per fish exceeded twice the threshold within one step at t={grid[k]:.4g}; "
                "the Euler step is too coarse",
                RuntimeWarning,
                stacklevel=2,
            )
        hit = np.flatnonzero(ratio >= lk)
        if hit.size:
            u = buffers.take(hit, counts[hit])
            y = lice_survival(u[:, 0], bio.beta1, bio.beta2)
            x = bio.x_low + span * u[:, 1]
            p[hit] *= y
            h[hit] *= x
            counts[hit] += 1
            ev_path.append(hit)
            ev_step.append(np.full(hit.size, k, dtype=np.int32))
            ev_x.append(x)
            ev_y.append(y)
        removals[:, k] = counts
        if keep_paths:
            host[:, k], parasite[:, k] = h, p

    if not keep_paths:
        host = np.stack([np.full(n_paths, float(bio.H0)), h], axis=1)
        parasite = np.stack([np.full(n_paths, float(bio.P0)), p], axis=1)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype=dtype)

    return HostParasitePathSet(
        grid=grid,
        host=host,
        parasite=parasite,
        removals=removals,
        event_path=cat(ev_path, np.int64),
        event_step=cat(ev_step, np.int32),
        event_x=cat(ev_x, float),
        event_y=cat(ev_y, float),
    )


@dataclass
class DeterministicCurves:
    """Mean host count and mean cumulative treatment-cost fraction on a grid."""

    grid: np.ndarray
    host: np.ndarray
    treatment_cost: np.ndarray


def deterministic_counterpart(paths: HostParasitePathSet, c_tr: float = 0.015) -> DeterministicCurves:
    """Pointwise Monte Carlo means used as the deterministic mortality model."""
    from .economics import treatment_cost_fraction

    if paths.n_paths == 0:
        raise ValueError("empty path set")
    if paths.host.shape[1] != paths.grid.size:
        raise ValueError("path set was simulated without keeping full paths")
    host = paths.host.mean(axis=0)
    ct = treatment_cost_fraction(paths.removals, c_tr).mean(axis=0)
    return DeterministicCurves(grid=paths.grid, host=host, treatment_cost=ct)
