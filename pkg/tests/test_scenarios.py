import os

import pytest

from stopline.network import NetworkSpec, validate_network
from stopline.scenarios import (
    RAMP_RATES_VPH,
    RAMP_TIERS,
    REFERENCE_BUILDERS,
    flat_schedule,
    make_arterial2,
    make_grid,
    make_single_intersection,
    ramp_schedule,
)


def test_ramp_schedule_three_tiers():
    sched = ramp_schedule()
    assert [(t0, t1) for (t0, t1, _r) in sched] == list(RAMP_TIERS)
    assert [r for (_t0, _t1, r) in sched] == list(RAMP_RATES_VPH)
    assert RAMP_RATES_VPH == (236.0, 354.0, 528.0)


def test_ramp_schedule_scaling():
    sched = ramp_schedule(0.5)
    assert [r for (*_ts, r) in sched] == [118.0, 177.0, 264.0]


def test_flat_schedule_single_interval():
    assert flat_schedule(400.0, 900.0) == [(0.0, 900.0, 400.0)]


def test_single_intersection_has_no_demand_by_default():
    assert make_single_intersection().demand == []


def test_single_intersection_demand_covers_both_axes():
    spec = make_single_intersection(schedule_h=ramp_schedule(),
                                    schedule_v=ramp_schedule(0.6))
    net = validate_network(spec)
    assert {d.source for d in spec.demand} == set(net.entry_links)


def test_arterial2_layout():
    net = validate_network(make_arterial2())
    assert len(net.intersections) == 2
    assert net.neighbors("n0_0") == frozenset({"n0_1"})
    assert net.neighbors("n0_1") == frozenset({"n0_0"})


def test_grid_dimensions_and_demand():
    spec = make_grid(rows=2, cols=3,
                     row_schedules=[flat_schedule(100.0)] * 2,
                     col_schedules=[flat_schedule(80.0)] * 3)
    net = validate_network(spec)
    assert len(net.intersections) == 6
    # every boundary entry link carries a demand profile
    assert {d.source for d in spec.demand} == set(net.entry_links)


def test_reference_grid_shape():
    spec = REFERENCE_BUILDERS["grid4x4"]()
    net = validate_network(spec)
    assert len(net.intersections) == 16
    assert all(net.num_phases(i) == 2 for i in net.intersections)
    assert spec.params.fixed_greens == {"*": [24.0, 16.0]}
    tiers = {tuple((t0, t1) for (t0, t1, _r) in d.schedule)
             for d in spec.demand}
    assert tiers == {RAMP_TIERS}


def test_reference_grid_mixed_has_three_phase_nodes():
    spec = REFERENCE_BUILDERS["grid4x4_mixed"]()
    net = validate_network(spec)
    counts = sorted(net.num_phases(i) for i in net.intersections)
    assert counts.count(3) == 2
    assert counts.count(2) == 14


def test_stability_grid_declares_epsilon():
    spec = REFERENCE_BUILDERS["stability_grid"]()
    assert spec.params.stability_epsilon == 0.05
    rates = {r for d in spec.demand for (*_ts, r) in d.schedule}
    assert rates == {300.0, 220.0}


def test_all_reference_builders_validate():
    for name, builder in REFERENCE_BUILDERS.items():
        validate_network(builder())


def test_shipped_scenario_files_round_trip():
    root = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    for name, builder in REFERENCE_BUILDERS.items():
        path = os.path.join(root, f"{name}.json")
        assert os.path.exists(path), name
        loaded = NetworkSpec.from_json(path)
        assert loaded == builder(), name
        validate_network(loaded)
