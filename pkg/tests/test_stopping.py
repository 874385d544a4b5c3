import numpy as np
import pytest

from aquaharvest.config import SolverConfig
from aquaharvest.economics import ExercisePayoffMatrix
from aquaharvest.stopping import (
    RankCollapseError,
    StoppingProblem,
    StoppingRule,
    chain_payoff_matrix,
    compare_rules,
    dp_oracle,
    evaluate_rule,
    sample_chain,
    solve_rule,
    state_components,
    stop_indices,
    truncated_lstsq,
)


def gbm_problem(n=4000, m=6, seed=0, strike=1.0, r=0.05, source="train"):
    """Bermudan put on a geometric Brownian motion."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, m + 1)[1:]
    dt = t[0]
    z = rng.standard_normal((n, m))
    s = np.exp(np.cumsum((r - 0.5 * 0.04) * dt + 0.2 * np.sqrt(dt) * z, axis=1))
    pay = np.exp(-r * t) * np.maximum(strike - s, 0.0)
    return ExercisePayoffMatrix(t, pay, s[:, :, None], ("S1",), source=source)


def test_state_components():
    assert state_components("determ", "determ") == ("S1", "delta1")
    assert state_components("determ", "stoch") == ("S1", "delta1", "S2", "delta2")
    assert state_components("stoch", "stoch") == ("S1", "delta1", "S2", "delta2", "H", "P")
    with pytest.raises(ValueError):
        state_components("x", "stoch")


def test_single_date_stops_everywhere():
    pm = gbm_problem(m=1)
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    ev = evaluate_rule(rule, pm)
    assert np.all(ev.stop_index == 0)
    assert ev.v0 == pytest.approx(pm.payoff[:, 0].mean())
    assert rule.in_sample_value == pytest.approx(pm.payoff[:, 0].mean())


def test_deterministic_payoffs_stop_at_argmax():
    t = np.linspace(0.25, 3.0, 12)
    g = -(t - 1.9) ** 2 + 5.0
    n = 50
    pm = ExercisePayoffMatrix(t, np.tile(g, (n, 1)), np.ones((n, t.size, 1)), ("S1",))
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    ev = evaluate_rule(rule, pm)
    assert np.all(ev.stop_index == np.argmax(g))
    assert ev.v0 == pytest.approx(g.max())


def test_dp_oracle_trivial_cases():
    sol = dp_oracle([[1.0]], [[1.0], [2.0]], [1.0, 2.0])
    assert sol.value == 2.0 and not sol.policy[0, 0] and sol.policy[1, 0]
    P = [[0.5, 0.5], [0.5, 0.5]]
    sol = dp_oracle(P, [[3.0, 3.0], [3.0, 3.0], [3.0, 3.0]], [1, 2, 3])
    assert sol.value == 3.0
    with pytest.raises(ValueError):
        dp_oracle([[0.5, 0.4], [0.5, 0.5]], [[1.0, 1.0]], [1.0])


def random_chain(rng, n_states=5, n_dates=3):
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    g = rng.uniform(0.5, 2.0, size=(n_dates, n_states))
    return P, g, np.arange(1, n_dates + 1, dtype=float)


def test_three_date_chain_matches_dp():
    rng = np.random.default_rng(5)
    P, g, t = random_chain(rng)
    oracle = dp_oracle(P, g, t, r=0.03)
    train = chain_payoff_matrix(sample_chain(P, 3, 2**15, rng), g, t, 0.03)
    test = chain_payoff_matrix(sample_chain(P, 3, 2**15, rng), g, t, 0.03)
    rule = solve_rule(StoppingProblem(train, train.state_names), SolverConfig(include_payoff=False))
    ev = evaluate_rule(rule, test)
    assert ev.v0 == pytest.approx(oracle.value, rel=0.01)
    assert ev.v0 <= oracle.value + 3 * ev.stderr


def test_any_rule_is_a_lower_bound():
    rng = np.random.default_rng(8)
    P, g, t = random_chain(rng, n_dates=4)
    oracle = dp_oracle(P, g, t)
    test = chain_payoff_matrix(sample_chain(P, 4, 2**14, rng), g, t)
    for k in range(4):
        stopped = test.payoff[:, k]
        assert stopped.mean() <= oracle.value + 3 * stopped.std() / np.sqrt(stopped.size)


def test_out_of_sample_value_below_in_sample():
    train = gbm_problem(seed=1)
    test = gbm_problem(seed=2, source="test")
    rule = solve_rule(StoppingProblem(train, ("S1",)))
    ev = evaluate_rule(rule, test)
    assert ev.v0 <= rule.in_sample_value + 3 * (ev.stderr + rule.in_sample_stderr)
    # early exercise is worth something relative to holding to the end
    assert ev.v0 > test.payoff[:, -1].mean()


def test_stopping_times_on_exercise_grid():
    pm = gbm_problem()
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    ev = evaluate_rule(rule, pm)
    assert np.all(np.isin(ev.stopping_times, pm.exercise_dates))
    assert ev.stopping_times.max() <= pm.exercise_dates[-1]


def test_stop_at_first_date_rule():
    pm = gbm_problem(m=4)
    m = 4
    rule = StoppingRule(
        exercise_dates=pm.exercise_dates, state_names=("S1",), degree=0, include_payoff=False,
        coef=[np.array([-np.inf])] * (m - 1), feat_mean=np.zeros((m - 1, 1)), feat_scale=np.ones((m - 1, 1)),
    )
    ev = evaluate_rule(rule, pm)
    assert np.all(ev.stop_index == 0)
    assert ev.v0 == pytest.approx(pm.payoff[:, 0].mean())


def test_identical_rules_give_unit_ri():
    pm = gbm_problem()
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    rep = compare_rules(rule, rule, pm)
    assert rep.RI == 1.0 and np.all(rep.tau_diff == 0)
    assert rep.stderr_stoch > 0


def test_mismatched_path_sets_rejected():
    a = gbm_problem(n=100, source="a")
    b = gbm_problem(n=100, source="b")
    rule = solve_rule(StoppingProblem(a, ("S1",)))
    with pytest.raises(ValueError, match="mismatched"):
        compare_rules(rule, rule, a, b)
    with pytest.raises(ValueError):
        compare_rules(rule, rule, a, gbm_problem(n=50, source="a"))


def test_state_dimension_mismatch_rejected():
    pm = gbm_problem(n=100)
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    other = ExercisePayoffMatrix(pm.exercise_dates, pm.payoff, pm.state, ("S2",))
    with pytest.raises(ValueError):
        evaluate_rule(rule, other)


def test_nan_payoffs_rejected():
    pm = gbm_problem(n=100)
    pm.payoff[3, 2] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        solve_rule(StoppingProblem(pm, ("S1",)))


def test_truncated_lstsq():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 3))
    y = A @ np.array([1.0, -2.0, 0.5])
    exact, rank, _ = truncated_lstsq(A, y)
    np.testing.assert_allclose(exact, [1.0, -2.0, 0.5])
    assert rank == 3
    # an exactly collinear column is truncated, not amplified
    B = np.column_stack([A, A[:, 0]])
    coef, rank, cond = truncated_lstsq(B, y)
    assert rank == 3 and np.isfinite(cond)
    np.testing.assert_allclose(B @ coef, y, atol=1e-9)
    ridge, _, _ = truncated_lstsq(A, y, ridge=1e-2)
    assert np.linalg.norm(ridge) < np.linalg.norm(exact)
    with pytest.raises(RankCollapseError):
        truncated_lstsq(np.zeros((5, 2)), np.ones(5))


def test_constant_state_components_are_harmless():
    pm = gbm_problem(n=500)
    state = np.concatenate([pm.state, np.ones_like(pm.state)], axis=2)
    pm2 = ExercisePayoffMatrix(pm.exercise_dates, pm.payoff, state, ("S1", "delta1"))
    a = evaluate_rule(solve_rule(StoppingProblem(pm, ("S1",))), pm)
    b = evaluate_rule(solve_rule(StoppingProblem(pm2, ("S1", "delta1"))), pm2)
    assert a.v0 == pytest.approx(b.v0, rel=1e-9)


def test_rule_json_round_trip(tmp_path):
    pm = gbm_problem(n=500)
    rule = solve_rule(StoppingProblem(pm, ("S1",)))
    rule.provenance = {"note": "x"}
    rule.save(tmp_path / "r.json")
    back = StoppingRule.load(tmp_path / "r.json")
    assert np.array_equal(stop_indices(rule, pm), stop_indices(back, pm))
    assert back.provenance == {"note": "x"}


def test_mode_checks_state_names():
    t = np.array([1.0, 2.0])
    pm = ExercisePayoffMatrix(t, np.ones((3, 2)), np.ones((3, 2, 2)), ("S1", "delta1"))
    StoppingProblem(pm, ("S1", "delta1"), mode="determ/determ")
    with pytest.raises(ValueError):
        StoppingProblem(pm, ("S1",), mode="determ/determ")
