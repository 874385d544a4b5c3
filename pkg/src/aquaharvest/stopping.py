"""Regression-based optimal stopping for the harvesting decision.

Backward induction in the Longstaff-Schwartz style: at each exercise date the
realised cash flow of the current policy is regressed on polynomial features
of the standardised state (plus the immediate payoff), and the rule stops
whenever the immediate payoff is at least the fitted continuation value.
The least-squares solve goes through a truncated SVD, which keeps the
regression stable when features are collinear or degenerate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Any

import numpy as np

from .config import SolverConfig
from .economics import ExercisePayoffMatrix

FARM_MODES = ("stoch", "determ")


class RankCollapseError(ValueError):
    pass


def state_components(mortality: str, feeding: str) -> tuple[str, ...]:
    """State seen by a rule for the given mortality and feeding models."""
    if mortality not in FARM_MODES or feeding not in FARM_MODES:
        raise ValueError(f"unknown mode ({mortality!r}, {feeding!r})")
    names = ["S1", "delta1"]
    if feeding == "stoch":
        names += ["S2", "delta2"]
    if mortality == "stoch":
        names += ["H", "P"]
    return tuple(names)


@dataclass
class StoppingProblem:
    payoff: ExercisePayoffMatrix
    state_names: tuple[str, ...]
    mode: str = ""

    def __post_init__(self):
        if self.mode:
            mortality, _, feeding = self.mode.partition("/")
            expected = state_components(mortality, feeding)
            if tuple(self.state_names) != expected:
                raise ValueError(f"mode {self.mode} uses state {expected}, got {self.state_names}")
        self.payoff.components(self.state_names)

    @property
    def state_dim(self) -> int:
        return len(self.state_names)

    @property
    def exercise_dates(self) -> np.ndarray:
        return self.payoff.exercise_dates


def _poly_features(z: np.ndarray, degree: int) -> np.ndarray:
    n, p = z.shape
    cols = [np.ones(n)]
    if degree >= 1:
        cols += [z[:, j] for j in range(p)]
    if degree >= 2:
        cols += [z[:, i] * z[:, j] for i, j in combinations_with_replacement(range(p), 2)]
    return np.column_stack(cols)


def _raw_features(state_k: np.ndarray, payoff_k: np.ndarray, include_payoff: bool) -> np.ndarray:
    if include_payoff:
        return np.column_stack([state_k, payoff_k])
    return np.asarray(state_k)


def truncated_lstsq(A: np.ndarray, y: np.ndarray, rcond: float = 1e-8, ridge: float = 0.0):
    """Least squares through an SVD with relative singular-value cutoff.

    With ``ridge > 0`` the retained components are additionally damped by
    Tikhonov filter factors ``s / (s^2 + ridge * s_max^2)``. Returns the
    coefficients, the retained rank and the condition number of the retained
    block.
    """
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("regression inputs contain NaN or inf")
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise RankCollapseError("design matrix is identically zero")
    keep = s > rcond * s[0]
    rank = int(keep.sum())
    s_k = s[keep]
    if ridge > 0:
        inv = s_k / (s_k**2 + ridge * s[0] ** 2)
    else:
        inv = 1.0 / s_k
    coef = vt[keep].T @ (inv * (u[:, keep].T @ y))
    return coef, rank, float(s_k[0] / s_k[-1])


@dataclass
class StoppingRule:
    """Per-date stop/continue decisions over the declared state components.

    Dates ``0 .. n-2`` carry regression coefficients and feature
    standardisation; the final date always stops.
    """

    exercise_dates: np.ndarray
    state_names: tuple[str, ...]
    degree: int
    include_payoff: bool
    coef: list[np.ndarray]
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    in_sample_value: float = float("nan")
    in_sample_stderr: float = float("nan")
    mode: str = ""
    diagnostics: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def n_dates(self) -> int:
        return self.exercise_dates.size

    def continuation(self, k: int, state_k: np.ndarray, payoff_k: np.ndarray) -> np.ndarray:
        if k >= self.n_dates - 1:
            return np.full(np.shape(payoff_k), -np.inf)
        raw = _raw_features(state_k, payoff_k, self.include_payoff)
        z = (raw - self.feat_mean[k]) / self.feat_scale[k]
        return _poly_features(z, self.degree) @ self.coef[k]

    def decide(self, k: int, state_k: np.ndarray, payoff_k: np.ndarray) -> np.ndarray:
        """Boolean stop decision for every path at date index ``k``."""
        payoff_k = np.asarray(payoff_k, dtype=float)
        if k >= self.n_dates - 1:
            return np.ones(payoff_k.shape, dtype=bool)
        return payoff_k >= self.continuation(k, state_k, payoff_k)

    def to_dict(self) -> dict[str, Any]:
        return {
            "exercise_dates": self.exercise_dates.tolist(),
            "state_names": list(self.state_names),
            "degree": self.degree,
            "include_payoff": self.include_payoff,
            "coef": [c.tolist() for c in self.coef],
            "feat_mean": self.feat_mean.tolist(),
            "feat_scale": self.feat_scale.tolist(),
            "in_sample_value": self.in_sample_value,
            "in_sample_stderr": self.in_sample_stderr,
            "mode": self.mode,
            "diagnostics": self.diagnostics,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StoppingRule":
        n_raw = len(d["state_names"]) + int(d["include_payoff"])
        return cls(
            exercise_dates=np.asarray(d["exercise_dates"], dtype=float),
            state_names=tuple(d["state_names"]),
            degree=int(d["degree"]),
            include_payoff=bool(d["include_payoff"]),
            coef=[np.asarray(c, dtype=float) for c in d["coef"]],
            feat_mean=np.asarray(d["feat_mean"], dtype=float).reshape(-1, n_raw),
            feat_scale=np.asarray(d["feat_scale"], dtype=float).reshape(-1, n_raw),
            in_sample_value=float(d["in_sample_value"]),
            in_sample_stderr=float(d["in_sample_stderr"]),
            mode=d.get("mode", ""),
            diagnostics=d.get("diagnostics", {}),
            provenance=d.get("provenance", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "StoppingRule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def solve_rule(problem: StoppingProblem, solver: SolverConfig | None = None) -> StoppingRule:
    """Fit a stopping rule by regression-based backward induction."""
    solver = solver or SolverConfig()
    pm = problem.payoff
    payoff = pm.payoff
    if not np.all(np.isfinite(payoff)):
        raise ValueError("payoffs contain NaN or inf")
    state = pm.components(problem.state_names)
    if not np.all(np.isfinite(state)):
        raise ValueError("states contain NaN or inf")
    n, m = payoff.shape

    n_raw = problem.state_dim + int(solver.include_payoff)
    coef: list[np.ndarray] = [np.zeros(0)] * (m - 1)
    feat_mean = np.zeros((max(m - 1, 0), n_raw))
    feat_scale = np.ones((max(m - 1, 0), n_raw))
    ranks, conds = [], []
    cash = payoff[:, -1].copy()
    for k in range(m - 2, -1, -1):
        raw = _raw_features(state[:, k], payoff[:, k], solver.include_payoff)
        mu = raw.mean(axis=0)
        sd = raw.std(axis=0)
        # constant components carry no information; map them to zero
        sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, np.inf)
        feat_mean[k], feat_scale[k] = mu, sd
        A = _poly_features((raw - mu) / sd, solver.degree)
        try:
            beta, rank, cond = truncated_lstsq(A, cash, solver.rcond, solver.ridge)
        except RankCollapseError as exc:
            raise RankCollapseError(
                f"date {k} (t={pm.exercise_dates[k]:.4g}): {exc}; features {problem.state_names}"
            ) from None
        coef[k] = beta
        ranks.append(rank)
        conds.append(cond)
        stop = payoff[:, k] >= A @ beta
        cash = np.where(stop, payoff[:, k], cash)

    rule = StoppingRule(
        exercise_dates=pm.exercise_dates.copy(),
        state_names=tuple(problem.state_names),
        degree=solver.degree,
        include_payoff=solver.include_payoff,
        coef=coef,
        feat_mean=feat_mean,
        feat_scale=feat_scale,
        in_sample_value=float(cash.mean()),
        in_sample_stderr=float(cash.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        mode=problem.mode,
        diagnostics={
            "rank": ranks[::-1],
            "condition": conds[::-1],
            "n_features": int(_poly_features(np.zeros((1, n_raw)), solver.degree).shape[1]),
            "n_train_paths": int(n),
        },
    )
    return rule


@dataclass
class Evaluation:
    v0: float
    stderr: float
    stop_index: np.ndarray
    stopping_times: np.ndarray
    stopped_payoff: np.ndarray

    @property
    def mean_tau(self) -> float:
        return float(self.stopping_times.mean())


def stop_indices(rule: StoppingRule, decision: ExercisePayoffMatrix) -> np.ndarray:
    if decision.exercise_dates.shape != rule.exercise_dates.shape or not np.allclose(
        decision.exercise_dates, rule.exercise_dates
    ):
        raise ValueError("exercise dates of paths and rule differ")
    state = decision.components(rule.state_names)
    n, m = decision.payoff.shape
    if state.shape[2] != len(rule.state_names):
        raise ValueError("state dimension mismatch between paths and rule")
    tau = np.full(n, m - 1)
    open_ = np.ones(n, dtype=bool)
    for k in range(m - 1):
        idx = np.flatnonzero(open_)
        if idx.size == 0:
            break
        stop = rule.decide(k, state[idx, k], decision.payoff[idx, k])
        tau[idx[stop]] = k
        open_[idx[stop]] = False
    return tau


def evaluate_rule(
    rule: StoppingRule,
    decision: ExercisePayoffMatrix,
    realized: ExercisePayoffMatrix | None = None,
) -> Evaluation:
    """Apply ``rule`` pathwise and average the stopped payoff.

    The rule sees ``decision`` (its own model's state and payoff); the value
    is taken from ``realized`` payoffs on the same paths (defaults to
    ``decision``). On paths independent of the training set this is a
    low-biased estimate of the optimal value.
    """
    realized = realized or decision
    if realized.payoff.shape != decision.payoff.shape:
        raise ValueError("decision and realized payoffs cover different path sets")
    if decision.source and realized.source and decision.source != realized.source:
        raise ValueError(f"decision paths from {decision.source!r}, realized from {realized.source!r}")
    tau = stop_indices(rule, decision)
    stopped = realized.payoff[np.arange(tau.size), tau]
    n = stopped.size
    stderr = float(stopped.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Evaluation(
        v0=float(stopped.mean()),
        stderr=stderr,
        stop_index=tau,
        stopping_times=rule.exercise_dates[tau],
        stopped_payoff=stopped,
    )


@dataclass
class ComparisonReport:
    V0_stoch: float
    V0_determ: float
    stderr_stoch: float
    stderr_determ: float
    mean_tau_stoch: float
    mean_tau_determ: float
    RI: float
    n_eval_paths: int
    tau_diff: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict[str, float]:
        return {
            "V0_stoch": self.V0_stoch,
            "V0_determ": self.V0_determ,
            "stderr_stoch": self.stderr_stoch,
            "stderr_determ": self.stderr_determ,
            "mean_tau_stoch": self.mean_tau_stoch,
            "mean_tau_determ": self.mean_tau_determ,
            "RI": self.RI,
            "n_eval_paths": self.n_eval_paths,
            "share_tau_equal": float(np.mean(self.tau_diff == 0)) if self.tau_diff.size else float("nan"),
        }


def compare_rules(
    rule_stoch: StoppingRule,
    rule_determ: StoppingRule,
    world: ExercisePayoffMatrix,
    determ_view: ExercisePayoffMatrix | None = None,
) -> ComparisonReport:
    """Evaluate both rules on the same stochastic world.

    ``world`` holds the stochastic-world payoffs and states; ``determ_view``
    holds, for the same paths, the payoff as perceived by the
    deterministic-mortality model. Values always come from ``world``.
    """
    determ_view = determ_view or world
    if determ_view.payoff.shape != world.payoff.shape:
        raise ValueError("rules are evaluated on mismatched path sets")
    if world.source and determ_view.source and world.source != determ_view.source:
        raise ValueError(f"mismatched path sets: {world.source!r} vs {determ_view.source!r}")
    ev_s = evaluate_rule(rule_stoch, world)
    ev_d = evaluate_rule(rule_determ, determ_view, world)
    return ComparisonReport(
        V0_stoch=ev_s.v0,
        V0_determ=ev_d.v0,
        stderr_stoch=ev_s.stderr,
        stderr_determ=ev_d.stderr,
        mean_tau_stoch=ev_s.mean_tau,
        mean_tau_determ=ev_d.mean_tau,
        RI=ev_s.v0 / ev_d.v0,
        n_eval_paths=world.n_paths,
        tau_diff=ev_s.stopping_times - ev_d.stopping_times,
    )


# --- exact oracle on small Markov chains -----------------------------------------


@dataclass
class OracleSolution:
    value: float
    policy: np.ndarray
    values: np.ndarray


def dp_oracle(transition, payoffs, times, r: float = 0.0, initial=None) -> OracleSolution:
    """Exact backward induction for a finite Markov chain.

    The chain starts in distribution ``initial`` at time 0 and moves once per
    exercise date, so the state at date ``k`` has law ``initial @ P^(k+1)``.
    ``payoffs[k, s]`` is the undiscounted payoff of stopping in state ``s``
    at ``times[k]``; ``policy[k, s]`` is True where stopping is optimal.
    """
    P = np.asarray(transition, dtype=float)
    g = np.asarray(payoffs, dtype=float)
    times = np.asarray(times, dtype=float)
    m, n_states = g.shape
    if P.shape != (n_states, n_states):
        raise ValueError("transition matrix does not match payoff table")
    if not np.allclose(P.sum(axis=1), 1.0):
        raise ValueError("transition rows must sum to 1")
    init = np.full(n_states, 1.0 / n_states) if initial is None else np.asarray(initial, dtype=float)
    disc = g * np.exp(-r * times)[:, None]
    values = np.empty((m, n_states))
    policy = np.zeros((m, n_states), dtype=bool)
    values[-1] = disc[-1]
    policy[-1] = True
    for k in range(m - 2, -1, -1):
        cont = P @ values[k + 1]
        policy[k] = disc[k] >= cont
        values[k] = np.maximum(disc[k], cont)
    value = float(init @ P @ values[0])
    return OracleSolution(value=value, policy=policy, values=values)


def sample_chain(transition, n_dates: int, n_paths: int, rng: np.random.Generator, initial=None) -> np.ndarray:
    """Sample chain states at each exercise date, shape ``(n_paths, n_dates)``."""
    P = np.asarray(transition, dtype=float)
    n_states = P.shape[0]
    init = np.full(n_states, 1.0 / n_states) if initial is None else np.asarray(initial, dtype=float)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    s = rng.choice(n_states, size=n_paths, p=init)
    out = np.empty((n_paths, n_dates), dtype=np.int64)
    for k in range(n_dates):
        u = rng.random(n_paths)
        s = (u[:, None] > cum[s]).sum(axis=1)
        out[:, k] = s
    return out


def chain_payoff_matrix(states, payoffs, times, r: float = 0.0, source: str = "") -> ExercisePayoffMatrix:
    """Discounted payoffs with one-hot encoded chain states."""
    states = np.asarray(states)
    g = np.asarray(payoffs, dtype=float)
    times = np.asarray(times, dtype=float)
    n_states = g.shape[1]
    pay = g[np.arange(times.size)[None, :], states] * np.exp(-r * times)[None, :]
    onehot = np.eye(n_states)[states]
    names = tuple(f"s{j}" for j in range(n_states))
    return ExercisePayoffMatrix(exercise_dates=times, payoff=pay, state=onehot, state_names=names, source=source)
