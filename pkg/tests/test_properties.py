"""Property-based checks of the model invariants."""

import dataclasses

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from aquaharvest.biology import simulate_host_parasite
from aquaharvest.calibrate import euler_grid
from aquaharvest.commodity import simulate_two_factor
from aquaharvest.config import BioParams, CommodityParams, CostParams, GrowthParams, ThresholdFn
from aquaharvest.economics import cumulative_feeding, exercise_payoff, treatment_cost_fraction
from aquaharvest.ingest import (
    LiceRecord,
    flatten,
    parse_lice_file,
    removal_distribution_at,
    select_mechanical_only_periods,
    week_index,
    write_lice_file,
    year_week,
)
from aquaharvest.rng import Substreams
from aquaharvest.stopping import (
    StoppingProblem,
    chain_payoff_matrix,
    dp_oracle,
    evaluate_rule,
    sample_chain,
    solve_rule,
)

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
GRID = euler_grid(3.0, 72)

commodity_params = st.builds(
    CommodityParams,
    sigma1=st.floats(0.0, 1.5),
    sigma2=st.floats(0.0, 1.5),
    kappa=st.floats(0.1, 5.0),
    alpha=st.floats(-0.2, 0.2),
    lambda_rp=st.floats(0.0, 0.5),
    rho=st.floats(-1.0, 1.0),
    s0=st.floats(0.1, 200.0),
    delta0=st.floats(-0.5, 1.0),
)

bio_params = st.builds(
    lambda lam, b1, b2, alpha: dataclasses.replace(BioParams(), lambda_rep=lam, beta1=b1, beta2=b2, alpha_inf=alpha),
    st.floats(3.0, 12.0),
    st.floats(0.02, 5.0),
    st.floats(0.02, 5.0),
    st.floats(0.0, 0.5),
)


@SETTINGS
@given(commodity_params, st.integers(0, 2**32 - 1))
def test_commodity_positive_and_reproducible(params, seed):
    grid = np.linspace(0, 3, 25)
    a = simulate_two_factor(params, 0.03, grid, 16, Substreams(seed))
    b = simulate_two_factor(params, 0.03, grid, 16, Substreams(seed))
    assert np.all(a.spot > 0) and np.all(np.isfinite(a.delta))
    assert np.array_equal(a.spot, b.spot) and np.array_equal(a.delta, b.delta)


@SETTINGS
@given(bio_params, st.integers(0, 2**32 - 1))
def test_host_parasite_invariants(bio, seed):
    paths = simulate_host_parasite(bio, ThresholdFn.constant(0.5), GRID, 8, Substreams(seed))
    assert np.all(np.diff(paths.host, axis=1) <= 0)
    assert np.all((paths.event_y >= 0.1) & (paths.event_y <= 0.9))
    assert np.all((paths.event_x >= bio.x_low) & (paths.event_x <= 1.0))
    per_path = np.bincount(paths.event_path, minlength=8)
    assert np.array_equal(per_path, paths.removals[:, -1])
    again = simulate_host_parasite(bio, ThresholdFn.constant(0.5), GRID, 8, Substreams(seed))
    assert all(paths.events(i) == again.events(i) for i in range(8))


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
def test_cost_processes_monotone(seed, r, c_tr):
    rng = np.random.default_rng(seed)
    F = np.exp(rng.normal(0, 0.5, size=(3, GRID.size)).cumsum(axis=1) * 0.05)
    H = 1e4 * np.exp(-np.cumsum(rng.uniform(0, 1e-3, size=(3, GRID.size)), axis=1))
    cf = cumulative_feeding(F, H, GrowthParams(), 1.1, r, GRID)
    assert np.all(np.diff(cf, axis=1) >= 0)
    removals = np.cumsum(rng.random((3, GRID.size)) < 0.02, axis=1)
    ct = treatment_cost_fraction(removals, c_tr)
    assert np.all(np.diff(ct, axis=1) >= 0) and np.all((ct >= 0) & (ct <= 1))
    steps = np.diff(ct, axis=1)
    assert np.all(np.isclose(steps, 0) | np.isclose(steps, c_tr) | (ct[:, 1:] == 1.0))


@SETTINGS
@given(
    st.floats(10.0, 200.0), st.floats(1.01, 2.0), st.floats(0.0, 0.99), st.floats(1.0, 2e4),
    st.floats(0.0, 1e6), st.floats(0.05, 3.0), st.floats(0.5, 5.0),
)
def test_payoff_monotone_and_homogeneous(spot, bump, ct, host, cf, t, k):
    grid = np.array([0.0, t])
    args = (np.array([host, host]), np.array([0.0, ct]), np.array([0.0, cf]), GrowthParams(), CostParams(), 0.03,
            [t], grid)
    base = exercise_payoff(np.array([[spot, spot]]), *args).payoff[0, 0]
    higher = exercise_payoff(np.array([[spot, spot * bump]]), *args).payoff[0, 0]
    assert higher > base
    scaled_args = (k * args[0], args[1], k * args[2], *args[3:])
    scaled = exercise_payoff(np.array([[spot, spot]]), *scaled_args).payoff[0, 0]
    assert np.isclose(scaled, k * base, rtol=1e-9, atol=1e-6 * k)


records = st.lists(
    st.builds(
        lambda loc, idx, lpf, mech, med, cf, region: (loc, idx, lpf, mech, med, cf, region),
        st.sampled_from(["100", "200", "300"]),
        st.integers(week_index(2018, 1), week_index(2018, 1) + 150),
        st.one_of(st.none(), st.floats(0.0, 5.0, allow_nan=False)),
        st.booleans(), st.booleans(), st.booleans(),
        st.sampled_from(["Trøndelag", "Nordland"]),
    ),
    max_size=120,
)


def _build(raw):
    out, seen = [], set()
    for loc, idx, lpf, mech, med, cf, region in raw:
        if (loc, idx) in seen:
            continue
        seen.add((loc, idx))
        y, w = year_week(idx)
        out.append(LiceRecord(loc, y, w, lpf, mechanical=mech, medicinal=med and mech, cleanerfish=cf and not mech,
                              region=region))
    return out


@SETTINGS
@given(records)
def test_ingest_round_trip_and_idempotence(tmp_path_factory, raw):
    recs = _build(raw)
    path = tmp_path_factory.mktemp("lice") / "r.csv"
    write_lice_file(recs, path)
    assert parse_lice_file(path) == recs
    once = select_mechanical_only_periods(recs, "Trøndelag")
    assert select_mechanical_only_periods(flatten(once), "Trøndelag") == once
    if once:
        counts = [removal_distribution_at(once, t).counts for t in np.linspace(0, 3, 13)]
        assert np.all(np.diff(np.stack(counts), axis=0) >= 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(2, 4))
def test_evaluation_is_a_lower_bound(seed, n_states, n_dates):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    g = rng.uniform(0.5, 2.0, size=(n_dates, n_states))
    t = np.arange(1.0, n_dates + 1)
    oracle = dp_oracle(P, g, t)
    train = chain_payoff_matrix(sample_chain(P, n_dates, 4096, rng), g, t, source="train")
    test = chain_payoff_matrix(sample_chain(P, n_dates, 4096, rng), g, t, source="test")
    rule = solve_rule(StoppingProblem(train, train.state_names))
    ev = evaluate_rule(rule, test)
    assert ev.v0 <= oracle.value + 3 * ev.stderr
    assert np.all(np.isin(ev.stopping_times, t))
