import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import oracles
from riskscuc.dcopf_rt import Scenario
from riskscuc.evaluation import (SampleSpec, empirical_cvar, evaluate_schedules, sample_cap,
                                 sample_scenarios, sample_stressors, solve_stochastic_scuc,
                                 stochastic_objective)
from riskscuc.power_system import Bus, load_history
from riskscuc.scuc_da import CommitmentSchedule, solve_deterministic
from riskscuc.uncertainty import StressorVector, build_uncertainty_set


def _angle(a, b):
    return math.acos(max(-1.0, min(1.0, float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b))))))


def test_zero_angle_cone_returns_center():
    c = np.array([3.0, -1.0, 2.0])
    draws = sample_cap(c, 0.0, 50, np.random.default_rng(0))
    np.testing.assert_array_equal(draws, np.tile(c, (50, 1)))


def test_cone_norm_and_angle_over_many_samples():
    c = np.array([1.0, 2.0, -2.0])
    draws = sample_cap(c, math.pi / 3, 10_000, np.random.default_rng(1))
    np.testing.assert_allclose(np.linalg.norm(draws, axis=1), 3.0, rtol=1e-12)
    assert max(_angle(d, c) for d in draws) <= math.pi / 3 + 1e-9


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_cone_matches_rejection_reference(dim):
    rng = np.random.default_rng(dim)
    c = rng.normal(size=dim)
    draws = sample_cap(c, math.pi / 3, 4000, rng)
    cos = draws @ c / (np.linalg.norm(c) ** 2)
    ref = oracles.cap_cosines_by_rejection(c, math.pi / 3, 4000, np.random.default_rng(100 + dim))
    assert stats.ks_2samp(cos, ref).pvalue > 0.01
    # directions orthogonal to the center are isotropic: mean of the normalized residual is near 0
    u = c / np.linalg.norm(c)
    resid = draws - np.outer(draws @ u, u)
    assert np.linalg.norm(resid.mean(axis=0)) < 0.1 * np.linalg.norm(c)


def _uset(sys, R_d=5.0, seed=0):
    return build_uncertainty_set(oracles.random_history(sys, seed), None, sys, K=2, R_d=R_d)


def test_uniform_zero_bound_gives_zero_stressors():
    sys = oracles.random_tiny_instance(1)
    uset = _uset(sys, R_d=0.0)
    for a in sample_stressors(SampleSpec("uniform", 20), uset):
        assert np.all(a.alpha_d == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 200))
def test_uniform_samples_are_boxed_and_nonnegative(seed, R):
    sys = oracles.random_tiny_instance(seed % 7)
    uset = _uset(sys, R_d=R)
    spec = SampleSpec("uniform", 30, seed=seed)
    for a in sample_stressors(spec, uset):
        assert np.all(np.abs(a.alpha_d) <= R)
    for s in sample_scenarios(spec, uset):
        assert np.all(s.d_rt >= 0)


def test_cone_per_period_blocks(three_bus, rng):
    uset = build_uncertainty_set(rng.normal(30, 3, (60, 3)), rng.normal(20, 2, (60, 1)), three_bus,
                                 R_d=5, R_w=3)
    center = StressorVector([[5.0, 0.0], [-5.0, 0.0], [5.0, 0.0]], [[3.0, 3.0]])
    draws = sample_stressors(SampleSpec("cone", 200, center=center, seed=3), uset)
    for a in draws:
        assert np.linalg.norm(a.alpha_d[:, 0]) == pytest.approx(math.sqrt(75))
        assert _angle(a.alpha_d[:, 0], center.alpha_d[:, 0]) <= math.pi / 3 + 1e-9
        assert np.all(a.alpha_d[:, 1] == 0)  # zero block has no direction
        assert a.alpha_w[0, 0] == 3.0  # one-dimensional cap is the center itself
    joint = sample_stressors(SampleSpec("cone", 50, center=center, seed=3, joint=True), uset)
    flat_c = np.concatenate([center.alpha_d.ravel(), center.alpha_w.ravel()])
    for a in joint:
        flat = np.concatenate([a.alpha_d.ravel(), a.alpha_w.ravel()])
        assert np.linalg.norm(flat) == pytest.approx(np.linalg.norm(flat_c))


def test_spec_validation():
    with pytest.raises(ValueError):
        SampleSpec("cone", 10)
    with pytest.raises(ValueError):
        SampleSpec("cone", 10, center=StressorVector(np.zeros((1, 1)), np.zeros((0, 1))))
    with pytest.raises(ValueError):
        SampleSpec("uniform", 0)
    with pytest.raises(ValueError):
        SampleSpec("gaussian", 10)
    assert SampleSpec().n_samples == 100


def _stressed(cases_dir, stressed, R=30.0):
    hist = load_history(cases_dir / "stressed_1bus_load_history.csv", "load", stressed)
    return build_uncertainty_set(hist, None, stressed, K=1, R_d=R)


def test_identical_schedules_save_exactly_zero(stressed, cases_dir):
    uset = _stressed(cases_dir, stressed)
    det, _ = solve_deterministic(stressed)
    rep = evaluate_schedules(stressed, {"a": det, "b": det}, uset, SampleSpec("uniform", 40, seed=5))
    assert rep.pairwise[0].save == 0.0
    assert rep.pairwise[0].cost_red == 0.0


def test_seed_determinism(stressed, cases_dir):
    uset = _stressed(cases_dir, stressed)
    det, _ = solve_deterministic(stressed)
    on = CommitmentSchedule.from_y(np.ones((2, 2)))
    spec = SampleSpec("uniform", 30, seed=11)
    r1 = evaluate_schedules(stressed, [det, on], uset, spec)
    r2 = evaluate_schedules(stressed, [det, on], uset, spec, workers=3)
    for a, b in zip(r1.schedules, r2.schedules):
        assert a.mean_cost == b.mean_cost and a.std_cost == b.std_cost
        np.testing.assert_array_equal(a.costs, b.costs)


def test_extra_capacity_avoids_voll_pricing(stressed, cases_dir):
    uset = _stressed(cases_dir, stressed)
    det, _ = solve_deterministic(stressed)
    on = CommitmentSchedule.from_y(np.ones((2, 2)))
    spec = SampleSpec("uniform", 60, seed=2)
    rep = evaluate_schedules(stressed, {"det": det, "on": on}, uset, spec)
    d, r = rep.by_name("det"), rep.by_name("on")
    assert rep.pairwise[0].save >= 0
    assert r.std_cost <= d.std_cost
    # per-sample oracle: with both units on, load never exceeds 150 so no sample hits VOLL
    for scen, cost in zip(sample_scenarios(spec, uset), r.costs):
        excess = np.maximum(scen.d_rt - stressed.load_rt, 0)
        lam = np.where(scen.d_rt > 100, 30.0, 10.0)
        assert cost == pytest.approx(r.da_cost + float((lam * excess).sum()), rel=1e-9, abs=1e-9)


def test_fine_resolution_evaluation(stressed, cases_dir):
    uset = _stressed(cases_dir, stressed)
    det, _ = solve_deterministic(stressed)
    rep = evaluate_schedules(stressed, [det], uset, SampleSpec("uniform", 5, seed=1), rt_n_tp=12)
    assert rep.n_used == 5


def test_report_files(tmp_path, stressed, cases_dir):
    uset = _stressed(cases_dir, stressed)
    det, _ = solve_deterministic(stressed)
    on = CommitmentSchedule.from_y(np.ones((2, 2)))
    rep = evaluate_schedules(stressed, {"det": det, "on": on}, uset, SampleSpec("uniform", 10))
    names = sorted(p.name for p in rep.write_csv(tmp_path))
    assert names == ["lmp_distribution.csv", "pairwise.csv", "summary.csv"]


def test_failed_samples_are_excluded_pairwise():
    sys = oracles.one_bus([10], [{"p_max": 100, "p_min": 8, "cost": 5}])
    on = CommitmentSchedule.from_y([[1]])
    off = CommitmentSchedule.from_y([[0]])
    scen = [Scenario([[12.0]], np.zeros((0, 1))), Scenario([[2.0]], np.zeros((0, 1)))]
    rep = evaluate_schedules(sys, [off, on], None, None, scenarios=scen)
    assert rep.failed_samples == [1] and rep.n_used == 1


# --- stochastic benchmark -----------------------------------------------------
def _two_unit_system():
    return oracles.one_bus([80, 90], [{"p_max": 100, "cost": 10}, {"p_max": 50, "cost": 30, "startup": 300}],
                           voll_da=1e3, voll_rt=2e3)


def _scenarios(*loads):
    return [Scenario(np.array([l], float), np.zeros((0, 2))) for l in loads]


def test_single_scenario_collapses_to_deterministic():
    sys = _two_unit_system()
    scen = _scenarios([110.0, 95.0])
    sto = solve_stochastic_scuc(sys, scen, gap=1e-9)
    twin = replace(sys, buses=(Bus(1, (110.0, 95.0)),), voll_da=sys.voll_rt, voll_rt=sys.voll_rt + 1)
    _, disp = solve_deterministic(twin, gap=1e-9)
    assert sto.objective == pytest.approx(disp.objective, rel=1e-9)


def test_mean_cost_when_cvar_weight_is_zero():
    sys = _two_unit_system()
    scen = _scenarios([80.0, 90.0], [120.0, 140.0], [60.0, 70.0])
    sto = solve_stochastic_scuc(sys, scen, gap=1e-9)
    assert sto.objective == pytest.approx(np.mean(sto.scenario_costs), rel=1e-9)
    np.testing.assert_allclose(sto.eta, np.maximum(sto.scenario_costs - sto.z, 0))


@pytest.mark.parametrize("beta", [0.5, 0.3, 0.9])
def test_two_point_cvar_closed_form(beta):
    sys = _two_unit_system()
    sto = solve_stochastic_scuc(sys, _scenarios([80.0, 90.0], [130.0, 150.0]), rho_sto=1.0, beta=beta,
                                gap=1e-9)
    c1, c2 = sto.scenario_costs
    assert sto.cvar == pytest.approx(oracles.cvar_two_point(c1, c2, beta), abs=1e-6)
    assert empirical_cvar([c1, c2], beta) == pytest.approx(oracles.cvar_two_point(c1, c2, beta), abs=1e-6)


def test_eta_identity_and_cvar_at_optimum():
    sys = _two_unit_system()
    rng = np.random.default_rng(4)
    scen = _scenarios(*[rng.uniform(60, 150, 2) for _ in range(6)])
    sto = solve_stochastic_scuc(sys, scen, rho_sto=2.0, beta=0.8, gap=1e-9)
    np.testing.assert_allclose(sto.eta, np.maximum(sto.scenario_costs - sto.z, 0), atol=1e-6)
    assert sto.cvar == pytest.approx(empirical_cvar(sto.scenario_costs, 0.8), abs=1e-6)


def test_stochastic_dominates_fixed_schedules():
    sys = _two_unit_system()
    rng = np.random.default_rng(8)
    scen = _scenarios(*[rng.uniform(60, 150, 2) for _ in range(5)])
    det, _ = solve_deterministic(sys)
    for rho in (0.0, 1.0):
        sto = solve_stochastic_scuc(sys, scen, rho_sto=rho, gap=1e-9)
        for sched in (det, CommitmentSchedule.from_y(np.ones((2, 2)))):
            assert sto.objective <= stochastic_objective(sys, scen, sched, rho).objective + 1e-6


def test_warm_start_gives_same_optimum():
    sys = _two_unit_system()
    scen = _scenarios([80.0, 90.0], [130.0, 150.0])
    det, _ = solve_deterministic(sys)
    a = solve_stochastic_scuc(sys, scen, gap=1e-9, backend="bnb", warm_start=det)
    b = solve_stochastic_scuc(sys, scen, gap=1e-9)
    assert a.objective == pytest.approx(b.objective, rel=1e-9)


def test_stochastic_argument_checks():
    sys = _two_unit_system()
    with pytest.raises(ValueError):
        solve_stochastic_scuc(sys, [])
    with pytest.raises(ValueError):
        solve_stochastic_scuc(sys, _scenarios([1.0, 1.0]), beta=1.0)
