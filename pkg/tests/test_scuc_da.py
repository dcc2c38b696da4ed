import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from riskscuc.errors import ValidationError
from riskscuc.power_system import parse_case
from riskscuc.scuc_da import (CommitmentSchedule, DeterministicSCUC, build_da_model, da_cost,
                              da_pricing_run, solve_deterministic)


def _single(load, cap=100.0, slope=10.0):
    return oracles.one_bus([load], [{"p_max": cap, "cost": slope}], voll_da=1e4, voll_rt=2e4)


def test_single_unit_serves_load():
    sched, disp = solve_deterministic(_single(50))
    assert disp.objective == pytest.approx(500.0)
    assert sched.y.tolist() == [[1]]


def test_zero_load_commits_nothing():
    sched, disp = solve_deterministic(_single(0))
    assert disp.objective == pytest.approx(0.0)
    assert sched.y.tolist() == [[0]]


def test_shortfall_is_priced_at_voll():
    sched, disp = solve_deterministic(_single(150))
    assert disp.unmet[0, 0] == pytest.approx(50.0)
    assert disp.objective == pytest.approx(10 * 100 + 1e4 * 50)


def test_three_unit_deterministic_schedule(three_unit):
    sched, disp = solve_deterministic(three_unit, gap=1e-9)
    assert disp.objective == pytest.approx(136.0)
    assert sched.y.tolist() == [[1, 1], [1, 1], [0, 0]]
    np.testing.assert_allclose(disp.p[:2], [[50, 50], [9, 9]], atol=1e-9)


def test_estimator_fit_matches_function(three_unit):
    est = DeterministicSCUC(gap=1e-9).fit(three_unit)
    assert est.objective_ == pytest.approx(136.0)
    np.testing.assert_allclose(est.lmp_, [[2.0, 2.0]], atol=1e-9)


def test_startup_cost_and_cold_start():
    sys = oracles.one_bus([10, 10], [{"p_max": 20, "cost": 1, "startup": 7},
                                     {"p_max": 20, "cost": 5}])
    sched, disp = solve_deterministic(sys, gap=1e-9)
    assert disp.objective == pytest.approx(7 + 20)
    assert sched.v[0].tolist() == [1, 0]
    assert disp.breakdown["startup"] == pytest.approx(7.0)


def test_hourly_ramp_binds_after_the_first_hour():
    sys = oracles.one_bus([10, 40], [{"p_max": 50, "cost": 1, "ramp_hourly": 20},
                                     {"p_max": 50, "cost": 4}])
    _, disp = solve_deterministic(sys, gap=1e-9)
    assert disp.p[0, 1] - disp.p[0, 0] <= 20 + 1e-9
    assert disp.objective == pytest.approx(oracles.fixed_y_da_cost(sys, [[1, 1], [1, 1]]))


def test_flex_window_outside_horizon_is_rejected():
    doc = {
        "buses": [{"id": 1, "forecast_load": [1.0]}], "lines": [],
        "thermal_generators": [{"id": "A", "bus": 1, "p_min": 0, "p_max": 5, "cost_segments": [[1, 0]]}],
        "wind_generators": [],
        "time": {"da_hours": [1], "rt_hours": [1], "flex_window": [1, 2]},
        "voll_da": 10, "voll_rt": 20,
    }
    with pytest.raises(ValidationError):
        parse_case(doc)


def test_pricing_run_marginal_unit_sets_price():
    sys = oracles.one_bus([30], [{"p_max": 20, "cost": 3}, {"p_max": 20, "cost": 8}])
    sched, _ = solve_deterministic(sys)
    pr = da_pricing_run(sys, sched)
    assert pr.lmp[0, 0] == pytest.approx(8.0)
    assert pr.payment[0, 0] == pytest.approx(240.0)


def test_pricing_run_at_zero_load():
    sys = oracles.one_bus([0], [{"p_max": 20, "cost": 3}])
    pr = da_pricing_run(sys, CommitmentSchedule.from_y([[1]]))
    assert 0.0 - 1e-9 <= pr.lmp[0, 0] <= 3.0 + 1e-9
    assert pr.payment[0, 0] == 0.0


def _two_bus_congested():
    doc = {
        "buses": [{"id": 1, "forecast_load": [0.0]}, {"id": 2, "forecast_load": [20.0]}],
        "lines": [{"from_bus": 1, "to_bus": 2, "susceptance": 10.0, "capacity": 10.0}],
        "thermal_generators": [
            {"id": "cheap", "bus": 1, "p_min": 0, "p_max": 50, "cost_segments": [[5, 0]]},
            {"id": "local", "bus": 2, "p_min": 0, "p_max": 50, "cost_segments": [[30, 0]]},
        ],
        "wind_generators": [],
        "time": {"da_hours": [1], "rt_hours": [1]},
        "voll_da": 1000, "voll_rt": 2000,
    }
    return parse_case(doc)


def test_congested_two_bus_prices_separate():
    sys = _two_bus_congested()
    pr = da_pricing_run(sys, CommitmentSchedule.from_y([[1], [1]]))
    np.testing.assert_allclose(pr.lmp[:, 0], [5.0, 30.0], atol=1e-9)
    assert abs(pr.dispatch.f[0, 0]) == pytest.approx(10.0)
    ref = oracles.dispatch_lp_cost([0.0, 20.0], [(0, 0, 50, 5), (1, 0, 50, 30)], [(0, 1, 10.0, 10.0)])
    assert pr.objective == pytest.approx(ref)


def test_uncommitted_system_serves_load_at_voll():
    sys = oracles.one_bus([5], [{"p_max": 20, "p_min": 10, "cost": 1}])
    cost = da_cost(sys, CommitmentSchedule.from_y([[0]]))
    assert cost == pytest.approx(5 * 1e4)


def test_model_has_exact_row_families(three_unit):
    dm = build_da_model(three_unit)
    names = [r.name.split("[")[0] for r in dm.model.rows]
    assert names.count("balance") == 2
    assert dm.v_hat is None
    assert build_da_model(three_unit, rho=2.0).model.objective[-1] == 2.0


def _enumerate_min(sys):
    G, T = sys.n_thermal, sys.time.n_da
    best = math.inf
    for bits in itertools.product((0, 1), repeat=G * T):
        best = min(best, oracles.fixed_y_da_cost(sys, np.reshape(bits, (G, T))))
    return best


@pytest.mark.parametrize("seed", range(4))
def test_enumeration_equivalence(seed):
    sys = oracles.random_tiny_instance(seed, congested=seed % 2 == 1)
    if sys.n_thermal * sys.time.n_da > 8:
        sys = oracles.random_tiny_instance(seed + 100)
    _, disp = solve_deterministic(sys, gap=1e-9)
    assert disp.objective == pytest.approx(_enumerate_min(sys), rel=1e-6, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 5000))
def test_solution_invariants(seed):
    sys = oracles.random_tiny_instance(seed, congested=bool(seed % 2))
    sched, disp = solve_deterministic(sys, gap=1e-6)
    prev = np.concatenate([np.zeros((sys.n_thermal, 1), dtype=int), sched.y[:, :-1]], axis=1)
    assert np.array_equal(sched.v - sched.w, sched.y - prev)
    assert not np.any(sched.v * sched.w)
    bd = disp.breakdown
    total = bd["production"] + bd["startup"] + bd["shutdown"] + bd["unmet_penalty"]
    assert disp.objective == pytest.approx(total, abs=1e-6)
    # MIP primal feasibility tolerance
    assert np.all(disp.p >= -1e-6) and np.all(disp.unmet >= -1e-6)
    caps = np.array([ln.capacity for ln in sys.lines]).reshape(-1, 1)
    if sys.lines:
        assert np.all(np.abs(disp.f) <= caps + 1e-6)
    for t in range(sys.time.n_da):
        inj = np.zeros(sys.n_buses)
        np.add.at(inj, sys.thermal_bus, disp.p[:, t])
        inj += disp.unmet[:, t]
        assert inj.sum() == pytest.approx(sys.load_da[:, t].sum(), abs=1e-6)
