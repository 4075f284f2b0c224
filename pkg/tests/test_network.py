"""Network validation and derived-topology tests."""

import pytest

from stopline.network import (
    GlobalParams,
    NetworkSpec,
    NetworkValidationError,
    validate_network,
)
from stopline.scenarios import (
    make_grid,
    make_single_intersection,
    ramp_schedule,
    reference_grid,
    reference_grid_mixed,
)


def test_minimal_single_intersection_validates():
    spec = make_single_intersection()
    net = validate_network(spec)
    assert net.num_phases("x0") == 2
    assert len(net.in_links["x0"]) == 4
    assert len(net.out_links["x0"]) == 4


def test_multiply_served_movement_rejected():
    spec = make_single_intersection()
    # serve the same movement in both phases
    mv = spec.intersections[0].phases[0].movements[0]
    spec.intersections[0].phases[1].movements.append(mv)
    with pytest.raises(NetworkValidationError, match="multiply served"):
        validate_network(spec)


def test_dangling_link_endpoint_rejected():
    spec = make_single_intersection()
    spec.links[0].from_node = "nowhere"
    with pytest.raises(NetworkValidationError, match="dangling"):
        validate_network(spec)


def test_nonpositive_saturation_rate_rejected():
    spec = make_single_intersection()
    spec.links[0].saturation_rate = 0.0
    with pytest.raises(NetworkValidationError, match="saturation_rate"):
        validate_network(spec)


def test_turn_probabilities_must_sum_to_one():
    spec = make_grid(rows=2, cols=2, left_turn_nodes=("n0_0",), turn_prob=0.25,
                     row_schedules=[ramp_schedule(), ramp_schedule()])
    # corrupt one policy row
    prof = spec.demand[0]
    node, by_in = next(iter(prof.route_policy.items()))
    in_id, row = next(iter(by_in.items()))
    out_id = next(iter(row))
    row[out_id] += 0.5
    with pytest.raises(NetworkValidationError, match="sum to"):
        validate_network(spec)


def test_missing_policy_row_for_multi_option_inlink_rejected():
    spec = make_grid(rows=2, cols=2, left_turn_nodes=("n0_0",),
                     row_schedules=[ramp_schedule(), ramp_schedule()])
    spec.demand[0].route_policy = {}
    with pytest.raises(NetworkValidationError, match="turn options"):
        validate_network(spec)


def test_fewer_than_two_phases_rejected():
    spec = make_single_intersection()
    spec.intersections[0].phases = spec.intersections[0].phases[:1]
    with pytest.raises(NetworkValidationError, match="at least 2 phases"):
        validate_network(spec)


def test_grid_interior_neighbor_sets():
    """Interior nodes of the 4x4 grid: 2 upstream + 2 downstream per phase,
    disjoint across the two phases."""
    net = validate_network(make_grid(rows=4, cols=4))
    for r in (1, 2):
        for c in (1, 2):
            node = f"n{r}_{c}"
            up_h, down_h = net.neighbor_sets(node, 0)
            up_v, down_v = net.neighbor_sets(node, 1)
            assert len(up_h) == 2 and len(down_h) == 2
            assert len(up_v) == 2 and len(down_v) == 2
            assert up_h == down_h == {f"n{r}_{c - 1}", f"n{r}_{c + 1}"}
            assert up_v == down_v == {f"n{r - 1}_{c}", f"n{r + 1}_{c}"}
            assert not (up_h | down_h) & (up_v | down_v)


def test_grid_corner_neighbor_sets():
    """Corner nodes have one intersection neighbor per phase; the boundary
    side contributes nothing."""
    net = validate_network(make_grid(rows=4, cols=4))
    up_h, down_h = net.neighbor_sets("n0_0", 0)
    up_v, down_v = net.neighbor_sets("n0_0", 1)
    assert up_h == down_h == {"n0_1"}
    assert up_v == down_v == {"n1_0"}


def test_neighbor_symmetry_property():
    """t is upstream of s in some phase iff a link t->s exists."""
    net = validate_network(make_grid(rows=3, cols=4))
    for s in net.intersections:
        ups = set()
        for p in range(net.num_phases(s)):
            up, _ = net.neighbor_sets(s, p)
            ups |= up
        by_links = {net.links[l].from_node for l in net.in_links[s]
                    if net.links[l].from_node in net.intersections}
        assert ups == by_links


def test_movement_partition_property():
    """Every incoming movement is served by exactly one phase."""
    for spec in (reference_grid(), reference_grid_mixed()):
        net = validate_network(spec)
        for inter in spec.intersections:
            declared = [mv for ph in inter.phases for mv in ph.movements]
            assert len(declared) == len(set(declared))
            assert set(net.phase_of_movement[inter.id]) == set(declared)


def test_validation_idempotent():
    spec = reference_grid_mixed()
    net1 = validate_network(spec)
    net2 = validate_network(NetworkSpec.from_dict(net1.to_dict()))
    assert net1.to_dict() == net2.to_dict()
    assert net1._neighbor_sets == net2._neighbor_sets
    assert net1._matched_phase == net2._matched_phase


def test_matched_phase_by_orientation():
    net = validate_network(make_grid(rows=4, cols=4))
    # a row link couples to phase 0 ("h"), a column link to phase 1 ("v")
    assert net.matched_phase("n1_1", "n1_0->n1_1") == 0
    assert net.matched_phase("n1_1", "n1_1->n1_2") == 0
    assert net.matched_phase("n1_1", "n0_1->n1_1") == 1
    assert net.matched_phase("n1_1", "n1_1->n2_1") == 1


def test_matched_phase_mixed_node():
    net = validate_network(reference_grid_mixed())
    # at the 3-phase node the row link still matches the "h" phase,
    # the column link the "v" phase; the left phase never wins a match
    assert net.matched_phase("n1_1", "n1_0->n1_1") == 0
    assert net.matched_phase("n1_1", "n1_1->n2_1") == 1


def test_mixed_grid_left_phase_neighbor_sets():
    net = validate_network(reference_grid_mixed())
    up_l, down_l = net.neighbor_sets("n1_1", 2)
    assert up_l == {"n1_0", "n1_2"}      # lefts come off the row approaches
    assert down_l == {"n2_1", "n0_1"}    # and leave onto the column links


def test_connecting_links():
    net = validate_network(make_grid(rows=2, cols=2))
    into, outof = net.connecting_links("n0_0", "n0_1")
    assert into == "n0_1->n0_0"
    assert outof == "n0_0->n0_1"


def test_free_flow_time():
    net = validate_network(make_single_intersection(length=200.0, ffs=12.0))
    assert net.free_flow_time(["bw->x0", "x0->be"]) == pytest.approx(400.0 / 12.0)


def test_params_validation():
    with pytest.raises(NetworkValidationError, match="dt"):
        GlobalParams(dt=0.0).validate()
    with pytest.raises(NetworkValidationError, match="mf_damping"):
        GlobalParams(mf_damping=1.0).validate()
    with pytest.raises(NetworkValidationError, match="horizon"):
        GlobalParams(horizon=1.0, replan_period=5.0).validate()


def test_json_round_trip(tmp_path):
    spec = reference_grid()
    path = tmp_path / "grid.json"
    spec.to_json(str(path))
    again = NetworkSpec.from_json(str(path))
    assert again.to_dict() == spec.to_dict()
