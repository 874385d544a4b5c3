"""Cost processes and the discounted harvest payoff."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .biology import bertalanffy_weight, bertalanffy_weight_rate
from .config import CostParams, GrowthParams


def initial_spot_adjustment(cp: CostParams) -> float:
    """Initial salmon spot for the commodity model, in NOK/kg."""
    s0 = cp.s_hat0 - cp.PC + cp.h0 + cp.F0 + cp.BC0
    if s0 < 0:
        raise ValueError(f"cost configuration gives a negative initial salmon spot ({s0})")
    return s0


def treatment_cost_fraction(removals, c_tr: float):
    """Fraction of fish value consumed by treatments, ``min(c_tr * N_t, 1)``."""
    if not 0.0 <= c_tr <= 1.0:
        raise ValueError("c_tr must lie in [0, 1]")
    return np.minimum(c_tr * np.asarray(removals, dtype=float), 1.0)


def feeding_cost_curve(mode: str, relative_soy, F0: float) -> np.ndarray:
    """Feeding cost per kg and year driven by relative soy prices.

    ``mode="stoch"`` expects per-path relative prices ``(n_paths, n_grid)``;
    ``mode="determ"`` expects the mean curve ``E[S_t / S_0]``.
    """
    rel = np.asarray(relative_soy, dtype=float)
    if mode == "stoch":
        if rel.ndim != 2:
            raise ValueError("stochastic feeding needs per-path relative prices")
    elif mode == "determ":
        if rel.ndim != 1:
            raise ValueError("deterministic feeding needs a single mean curve")
    else:
        raise ValueError(f"unknown feeding mode {mode!r}")
    if np.any(rel <= 0):
        raise ValueError("relative prices must be positive")
    if not np.allclose(rel[..., 0], 1.0, rtol=1e-12, atol=0.0):
        raise ValueError("relative prices must equal 1 at t=0")
    return F0 * rel


def cumulative_feeding(F, H, g: GrowthParams, conv: float, r: float, grid) -> np.ndarray:
    """Discounted cumulative feeding cost ``int_0^t e^{-rs} F_s H_s w'(s) conv ds``.

    ``F`` and ``H`` may each be a single curve or per-path arrays on ``grid``;
    integration is by the trapezoidal rule along the last axis.
    """
    grid = np.asarray(grid, dtype=float)
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    for name, arr in (("F", F), ("H", H)):
        if arr.shape[-1] != grid.size:
            raise ValueError(f"grid mismatch: {name} has {arr.shape[-1]} points, grid has {grid.size}")
    integrand = np.exp(-r * grid) * F * H * np.asarray(bertalanffy_weight_rate(grid, g)) * conv
    return cumulative_trapezoid(integrand, grid, axis=-1, initial=0.0)


@dataclass
class ExercisePayoffMatrix:
    """Discounted payoffs and conditioning states at each exercise date.

    ``payoff`` has shape ``(n_paths, n_dates)`` and ``state`` shape
    ``(n_paths, n_dates, d)`` with component names in ``state_names``.
    ``source`` tags the simulated world the rows came from.
    """

    exercise_dates: np.ndarray
    payoff: np.ndarray
    state: np.ndarray
    state_names: tuple[str, ...]
    source: str = ""
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.payoff.shape
        if self.exercise_dates.shape != (m,):
            raise ValueError("exercise dates do not match payoff columns")
        if self.state.shape[:2] != (n, m) or self.state.shape[2] != len(self.state_names):
            raise ValueError("state array shape does not match payoffs and state names")

    @property
    def n_paths(self) -> int:
        return self.payoff.shape[0]

    def components(self, names) -> np.ndarray:
        missing = [nm for nm in names if nm not in self.state_names]
        if missing:
            raise ValueError(f"state components {missing} not available (have {self.state_names})")
        idx = [self.state_names.index(nm) for nm in names]
        return self.state[:, :, idx]

    def save_npz(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            exercise_dates=self.exercise_dates,
            payoff=self.payoff,
            state=self.state,
            state_names=np.array(self.state_names),
            source=np.array(self.source),
        )

    @classmethod
    def load_npz(cls, path: str | Path) -> "ExercisePayoffMatrix":
        with np.load(path) as z:
            return cls(
                exercise_dates=z["exercise_dates"],
                payoff=z["payoff"],
                state=z["state"],
                state_names=tuple(str(s) for s in z["state_names"]),
                source=str(z["source"]),
            )

    def save_csv(self, path: str | Path) -> None:
        """Long format: one row per (path, date)."""
        n, m = self.payoff.shape
        cols = [
            np.repeat(np.arange(n), m),
            np.tile(self.exercise_dates, n),
            self.payoff.ravel(),
            *[self.state[:, :, j].ravel() for j in range(len(self.state_names))],
        ]
        header = ",".join(["path", "t", "payoff", *self.state_names])
        fmt = ["%d", "%.10g", "%.10g"] + ["%.10g"] * len(self.state_names)
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt=fmt)


def grid_indices(grid, dates, tol: float = 1e-9) -> np.ndarray:
    """Indices of ``dates`` in ``grid``; every date must be a grid point."""
    grid = np.asarray(grid, dtype=float)
    dates = np.atleast_1d(np.asarray(dates, dtype=float))
    idx = np.clip(np.searchsorted(grid, dates), 0, grid.size - 1)
    lower = np.clip(idx - 1, 0, grid.size - 1)
    pick = np.where(np.abs(grid[lower] - dates) < np.abs(grid[idx] - dates), lower, idx)
    bad = np.abs(grid[pick] - dates) > tol * max(1.0, float(grid[-1]))
    if np.any(bad):
        raise ValueError(f"exercise dates {dates[bad][:3].tolist()} are not on the simulation grid")
    return pick


def harvest_payoff(spot, host, ct, cf, weight, h0: float, r: float, t):
    """``e^{-rt}((1 - CT) S B - h0 B) - CF`` with ``B = H w``."""
    b = host * weight
    return np.exp(-r * t) * ((1.0 - ct) * spot * b - h0 * b) - cf


def exercise_payoff(
    salmon_spot,
    host,
    CT,
    CF,
    g: GrowthParams,
    cp: CostParams,
    r: float,
    exercise_dates,
    grid,
    salmon_delta=None,
    soy=None,
    parasite=None,
    source: str = "",
) -> ExercisePayoffMatrix:
    """Assemble discounted harvest payoffs at the exercise dates.

    Path arrays live on ``grid`` (last axis); ``host``, ``CT`` and ``CF`` may
    be single curves (deterministic inputs) or per-path arrays. The state
    packs ``(S1, delta1[, S2, delta2][, H, P])`` depending on which optional
    components are given; ``soy`` is a ``(spot, delta)`` pair.
    """
    idx = grid_indices(grid, exercise_dates)
    t = np.asarray(grid, dtype=float)[idx]
    spot = np.atleast_2d(np.asarray(salmon_spot, dtype=float))
    n = spot.shape[0]

    def at(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(x[..., idx], (n, idx.size))

    w = np.asarray(bertalanffy_weight(t, g))
    payoff = harvest_payoff(at(spot), at(host), at(CT), at(CF), w, cp.h0, r, t)

    names, parts = ["S1"], [at(spot)]
    if salmon_delta is not None:
        names.append("delta1")
        parts.append(at(salmon_delta))
    if soy is not None:
        names += ["S2", "delta2"]
        parts += [at(soy[0]), at(soy[1])]
    if parasite is not None:
        names += ["H", "P"]
        parts += [at(host), at(parasite)]
    state = np.stack(parts, axis=-1)
    return ExercisePayoffMatrix(
        exercise_dates=t, payoff=np.ascontiguousarray(payoff), state=state, state_names=tuple(names), source=source
    )
