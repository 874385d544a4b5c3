"""Simulated farm worlds and the payoff matrices for each model variant.

A *world* is one set of jointly simulated salmon, soy and host-parasite
paths, stored only at the exercise dates. Cumulative feeding costs are
integrated on the fine Euler grid while the paths are generated, for all
four combinations of stochastic/deterministic mortality and feeding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .biology import DeterministicCurves, HostParasitePathSet, simulate_host_parasite
from .calibrate import euler_grid
from .commodity import mean_relative_spot_curve, simulate_two_factor
from .config import Config
from .economics import (
    ExercisePayoffMatrix,
    cumulative_feeding,
    exercise_payoff,
    feeding_cost_curve,
    treatment_cost_fraction,
)
from .stopping import (
    ComparisonReport,
    StoppingProblem,
    StoppingRule,
    compare_rules,
    evaluate_rule,
    solve_rule,
    state_components,
)

MODES = ("stoch", "determ")


def exercise_indices(N: int) -> np.ndarray:
    """Fine-grid indices of the harvest dates: the grid points nearest ``k T / N``."""
    k = np.arange(1, N + 1)
    return np.rint(k * (10 * N - 1) / N).astype(int)


@dataclass
class MeanModel:
    """Monte Carlo sample behind the deterministic mortality model."""

    grid: np.ndarray
    host: np.ndarray
    removals: np.ndarray

    @classmethod
    def from_paths(cls, paths: HostParasitePathSet) -> "MeanModel":
        return cls(grid=paths.grid, host=paths.host.mean(axis=0), removals=paths.removals)

    def curves(self, c_tr: float) -> DeterministicCurves:
        ct = treatment_cost_fraction(self.removals, c_tr).mean(axis=0)
        return DeterministicCurves(grid=self.grid, host=self.host, treatment_cost=ct)


def simulate_mean_model(cfg: Config, n_paths: int | None = None) -> MeanModel:
    g = cfg.globals
    grid = euler_grid(g.T, g.n_exercise)
    n = n_paths or g.n_mean_paths
    streams = rngmod.Substreams(g.seed, rngmod.MEAN, rngmod.BIOLOGY)
    return MeanModel.from_paths(simulate_host_parasite(cfg.bio, cfg.threshold, grid, n, streams))


@dataclass
class FarmWorld:
    """Jointly simulated paths sampled at the exercise dates, shape ``(n, m)``."""

    exercise_dates: np.ndarray
    s1: np.ndarray
    d1: np.ndarray
    s2: np.ndarray
    d2: np.ndarray
    host: np.ndarray
    parasite: np.ndarray
    removals: np.ndarray
    cf: dict[tuple[str, str], np.ndarray]
    source: str
    sample_paths: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.s1.shape[0]


def simulate_world(
    cfg: Config,
    stream: int,
    n_paths: int,
    mean_model: MeanModel,
    chunk: int = 4096,
    keep_sample: int = 0,
) -> FarmWorld:
    """Simulate a farm world in chunks of paths.

    Per-path substreams make the result independent of ``chunk``.
    ``keep_sample`` retains that many full fine-grid host/parasite paths for
    plotting.
    """
    g = cfg.globals
    grid = euler_grid(g.T, g.n_exercise)
    idx = exercise_indices(g.n_exercise)
    base = rngmod.Substreams(g.seed, stream)
    soy_mean = mean_relative_spot_curve(cfg.soy, g.r, grid)
    F_det = feeding_cost_curve("determ", soy_mean, cfg.costs.F0)
    cf_dd = cumulative_feeding(F_det, mean_model.host, cfg.growth, cfg.costs.conv, g.r, grid)

    parts: dict[str, list[np.ndarray]] = {k: [] for k in ("s1", "d1", "s2", "d2", "host", "parasite", "removals")}
    cf_parts: dict[tuple[str, str], list[np.ndarray]] = {(a, b): [] for a in MODES for b in MODES}
    sample: dict[str, np.ndarray] = {}
    for start in range(0, n_paths, chunk):
        nc = min(chunk, n_paths - start)
        sub = base.shifted(start)
        salmon = simulate_two_factor(cfg.salmon, g.r, grid, nc, sub.for_component(rngmod.SALMON))
        soy = simulate_two_factor(cfg.soy, g.r, grid, nc, sub.for_component(rngmod.SOY))
        bio = simulate_host_parasite(cfg.bio, cfg.threshold, grid, nc, sub.for_component(rngmod.BIOLOGY))

        F_st = feeding_cost_curve("stoch", soy.relative_spot(), cfg.costs.F0)
        conv, r = cfg.costs.conv, g.r
        cf_parts[("stoch", "stoch")].append(cumulative_feeding(F_st, bio.host, cfg.growth, conv, r, grid)[:, idx])
        cf_parts[("stoch", "determ")].append(cumulative_feeding(F_det, bio.host, cfg.growth, conv, r, grid)[:, idx])
        cf_parts[("determ", "stoch")].append(
            cumulative_feeding(F_st, mean_model.host, cfg.growth, conv, r, grid)[:, idx]
        )
        cf_parts[("determ", "determ")].append(np.broadcast_to(cf_dd[idx], (nc, idx.size)))

        parts["s1"].append(salmon.spot[:, idx])
        parts["d1"].append(salmon.delta[:, idx])
        parts["s2"].append(soy.spot[:, idx])
        parts["d2"].append(soy.delta[:, idx])
        parts["host"].append(bio.host[:, idx])
        parts["parasite"].append(bio.parasite[:, idx])
        parts["removals"].append(bio.removals[:, idx])
        if start == 0 and keep_sample:
            k = min(keep_sample, nc)
            sample = {"grid": grid, "host": bio.host[:k].copy(), "parasite": bio.parasite[:k].copy()}

    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return FarmWorld(
        exercise_dates=grid[idx],
        cf={k: np.concatenate(v) for k, v in cf_parts.items()},
        source=f"seed={g.seed}/stream={stream}/n={n_paths}",
        sample_paths=sample,
        **cat,
    )


def payoff_matrix(
    world: FarmWorld,
    cfg: Config,
    mortality: str,
    feeding: str,
    mean_model: MeanModel,
    c_tr: float | None = None,
) -> ExercisePayoffMatrix:
    """Payoffs and states at the exercise dates as seen by one model variant.

    ``mortality="stoch"`` uses the per-path host count and treatment costs;
    ``"determ"`` replaces both by their Monte Carlo means.
    """
    c_tr = cfg.costs.c_tr if c_tr is None else c_tr
    costs = cfg.costs if c_tr == cfg.costs.c_tr else _with_ctr(cfg, c_tr)
    t = world.exercise_dates
    idx = exercise_indices(cfg.globals.n_exercise)
    if mortality == "stoch":
        host = world.host
        ct = treatment_cost_fraction(world.removals, c_tr)
        parasite = world.parasite
    elif mortality == "determ":
        curves = mean_model.curves(c_tr)
        host = curves.host[idx]
        ct = curves.treatment_cost[idx]
        parasite = None
    else:
        raise ValueError(f"unknown mortality mode {mortality!r}")
    if feeding not in MODES:
        raise ValueError(f"unknown feeding mode {feeding!r}")
    soy = (world.s2, world.d2) if feeding == "stoch" else None
    return exercise_payoff(
        world.s1,
        host,
        ct,
        world.cf[(mortality, feeding)],
        cfg.growth,
        costs,
        cfg.globals.r,
        t,
        t,
        salmon_delta=world.d1,
        soy=soy,
        parasite=parasite,
        source=world.source,
    )


def _with_ctr(cfg: Config, c_tr: float):
    from dataclasses import replace

    return replace(cfg.costs, c_tr=c_tr)


def train_rule(
    world: FarmWorld, cfg: Config, mortality: str, feeding: str, mean_model: MeanModel, c_tr: float | None = None
) -> StoppingRule:
    pm = payoff_matrix(world, cfg, mortality, feeding, mean_model, c_tr)
    problem = StoppingProblem(pm, state_components(mortality, feeding), mode=f"{mortality}/{feeding}")
    rule = solve_rule(problem, cfg.solver)
    rule.provenance = {
        "config": cfg.to_dict(),
        "mortality": mortality,
        "feeding": feeding,
        "c_tr": cfg.costs.c_tr if c_tr is None else c_tr,
        "train_source": world.source,
    }
    return rule


def compare_on_world(
    rule_stoch: StoppingRule,
    rule_determ: StoppingRule,
    world: FarmWorld,
    cfg: Config,
    feeding: str,
    mean_model: MeanModel,
    c_tr: float | None = None,
) -> ComparisonReport:
    """Evaluate both rules on the stochastic world; values use stochastic payoffs."""
    stoch = payoff_matrix(world, cfg, "stoch", feeding, mean_model, c_tr)
    determ_view = payoff_matrix(world, cfg, "determ", feeding, mean_model, c_tr)
    return compare_rules(rule_stoch, rule_determ, stoch, determ_view)


def evaluate_on_world(
    rule: StoppingRule, world: FarmWorld, cfg: Config, mortality: str, feeding: str, mean_model: MeanModel,
    c_tr: float | None = None,
):
    realized = payoff_matrix(world, cfg, "stoch", feeding, mean_model, c_tr)
    decision = realized if mortality == "stoch" else payoff_matrix(world, cfg, mortality, feeding, mean_model, c_tr)
    return evaluate_rule(rule, decision, realized)
