import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskscuc.errors import CaseFormatError, ValidationError
from riskscuc.power_system import (UNBOUNDED, case_to_dict, dump_case, history_from_array, load_case,
                                   load_history, parse_case, TimeStructure)


def _case(**over):
    doc = {
        "buses": [{"id": 1, "forecast_load": [10.0]}],
        "lines": [],
        "thermal_generators": [
            {"id": "A", "bus": 1, "p_min": 0, "p_max": 20, "cost_segments": [[5.0, 0.0]]},
            {"id": "B", "bus": 1, "p_min": 0, "p_max": 20, "cost_segments": [[7.0, 0.0]]},
        ],
        "wind_generators": [],
        "time": {"da_hours": [1], "rt_hours": [1]},
        "voll_da": 1000, "voll_rt": 2000,
    }
    doc.update(over)
    return doc


def test_single_bus_two_generators_loads_without_lines(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(_case()))
    sys = load_case(p)
    assert sys.n_buses == 1 and sys.n_thermal == 2 and sys.lines == ()


def test_three_unit_case_has_unbounded_rt_ramps_for_first_two_units(three_unit):
    assert [g.p_max for g in three_unit.thermal_generators] == [50, 10, 50]
    ramp = three_unit.thermal_attr("ramp_rt")
    assert ramp[0] == UNBOUNDED and ramp[1] == UNBOUNDED and ramp[2] == 1


def test_pmin_above_pmax_is_rejected():
    doc = _case()
    doc["thermal_generators"][0]["p_min"] = 30
    with pytest.raises(ValidationError) as exc:
        parse_case(doc)
    assert "p_min" in str(exc.value)


@pytest.mark.parametrize("mutate, invariant", [
    (lambda d: d["buses"].append({"id": 1, "forecast_load": [1.0]}), "unique"),
    (lambda d: d["buses"][0].update(forecast_load=[-1.0]), "nonnegative"),
    (lambda d: d.update(voll_rt=500), "voll"),
    (lambda d: d["thermal_generators"][0].update(cost_segments=[]), "segment"),
    (lambda d: d["thermal_generators"][0].update(cost_segments=[[-1.0, 0.0]]), "slope"),
    (lambda d: d["thermal_generators"][0].update(ramp_hourly=0), "ramp"),
])
def test_invariant_violations_raise_structured_errors(mutate, invariant):
    doc = _case()
    mutate(doc)
    with pytest.raises((ValidationError, CaseFormatError)) as exc:
        parse_case(doc)
    assert invariant in str(exc.value).lower()


def test_disconnected_network_is_rejected():
    doc = _case(buses=[{"id": 1, "forecast_load": [1.0]}, {"id": 2, "forecast_load": [1.0]}])
    with pytest.raises(ValidationError, match="connected"):
        parse_case(doc)


def test_line_validation():
    doc = _case(buses=[{"id": 1, "forecast_load": [1.0]}, {"id": 2, "forecast_load": [1.0]}],
                lines=[{"from_bus": 1, "to_bus": 2, "susceptance": 0, "capacity": 5}])
    with pytest.raises(ValidationError, match="susceptance"):
        parse_case(doc)
    doc["lines"] = [{"from_bus": 1, "to_bus": 1, "susceptance": 1, "capacity": 5}]
    with pytest.raises(ValidationError):
        parse_case(doc)


def test_missing_key_and_bad_json_report_location(tmp_path):
    doc = _case()
    del doc["voll_rt"]
    with pytest.raises(CaseFormatError, match="voll_rt"):
        parse_case(doc)
    p = tmp_path / "bad.json"
    p.write_text('{"buses": [\n  1,,\n]}')
    with pytest.raises(CaseFormatError, match="line 2"):
        load_case(p)


def test_flex_window_outside_da_hours_is_a_validation_error():
    with pytest.raises(ValidationError, match="flex_window"):
        TimeStructure((1, 2), (1,), 1, (1, 3))


def test_rt_baselines_default_to_parent_hour(three_bus):
    rt = three_bus.load_rt
    cols = three_bus.time.rt_parent_index
    np.testing.assert_array_equal(rt, three_bus.load_da[:, cols])


def test_round_trip_is_identical(tmp_path, three_bus, three_unit):
    for sys in (three_bus, three_unit):
        p = tmp_path / "rt.json"
        dump_case(sys, p)
        again = load_case(p)
        assert case_to_dict(again) == case_to_dict(sys)
        assert again.thermal_generators == sys.thermal_generators
        assert again.buses == sys.buses


@settings(max_examples=30, deadline=None)
@given(loads=st.lists(st.floats(0, 500, allow_nan=False), min_size=1, max_size=4),
       pmax=st.floats(1, 300), slope=st.floats(0, 100), ramp=st.one_of(st.just(math.inf), st.floats(0.5, 50)))
def test_round_trip_property(tmp_path_factory, loads, pmax, slope, ramp):
    T = len(loads)
    doc = _case(buses=[{"id": "b", "forecast_load": loads}],
                time={"da_hours": list(range(1, T + 1)), "rt_hours": [1]},
                voll_da=1e4, voll_rt=2e4)
    for g in doc["thermal_generators"]:
        g.update(bus="b", p_max=pmax, cost_segments=[[slope, 0.0]],
                 ramp_rt="unbounded" if math.isinf(ramp) else ramp)
    sys = parse_case(doc)
    p = tmp_path_factory.mktemp("rt") / "c.json"
    dump_case(sys, p)
    assert case_to_dict(load_case(p)) == case_to_dict(sys)


def test_history_loading(tmp_path, three_bus):
    p = tmp_path / "h.csv"
    p.write_text("3,1,2\n1,2,3\n4,5,6\n7,8,9\n")
    h = load_history(p, "load", three_bus)
    assert h.columns == ("1", "2", "3")
    np.testing.assert_array_equal(h.values[:, 0], [2, 5, 8])  # reordered to system order


def test_history_with_one_row_is_rejected(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError, match="2 observations"):
        load_history(p, "load")


def test_history_with_missing_cell_is_a_parse_error(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n3,\n5,6\n")
    with pytest.raises(CaseFormatError, match="line 3"):
        load_history(p, "load")
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(CaseFormatError, match="expected 2"):
        load_history(p, "load")


def test_history_dimension_mismatch(tmp_path, three_bus):
    p = tmp_path / "h.csv"
    p.write_text("1,2\n1,2\n3,4\n")
    with pytest.raises(ValidationError, match="columns"):
        load_history(p, "load", three_bus)


def test_month_of_hourly_history_is_accepted(tmp_path, three_bus):
    vals = np.random.default_rng(0).uniform(10, 20, (720, 3))
    p = tmp_path / "h.csv"
    p.write_text("1,2,3\n" + "\n".join(",".join(map(str, r)) for r in vals))
    assert load_history(p, "load", three_bus).n_obs == 720
    assert history_from_array(vals).values.shape == (720, 3)


def test_rt_resolution_split_prorates_rt_ramp(three_bus):
    fine = three_bus.with_rt_resolution(12)
    assert fine.time.n_rt == 12 * three_bus.time.n_rt
    np.testing.assert_allclose(fine.thermal_attr("ramp_rt")[:2], three_bus.thermal_attr("ramp_rt")[:2] / 12)
    np.testing.assert_array_equal(fine.load_rt[:, :12], np.repeat(three_bus.load_rt[:, :1], 12, axis=1))
