import math

import numpy as np
import pytest

import stopline.protocol as P
from stopline.clustering import LinkSnapshot
from stopline.meanfield import sigmoid
from stopline.network import GlobalParams, validate_network
from stopline.scenarios import make_arterial2, make_grid, make_single_intersection
from stopline.scheduling import SchedulingError


def _params(**kw):
    return GlobalParams(**kw)


def _single():
    return validate_network(make_single_intersection())


def _arterial():
    return validate_network(make_arterial2())


# -- make_outbound ----------------------------------------------------------

def test_make_outbound_isolated_is_empty():
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite")
    assert P.make_outbound(a, net, {"bw->x0": 5.0}, 0.0) == []


def test_make_outbound_interior_node_both_roles():
    net = validate_network(make_grid(4, 4))
    a = P.make_agent(net, "n1_1", _params(), "composite")
    msgs = P.make_outbound(a, net, {}, 7.0)
    assert len(msgs) == 8  # 4 neighbors x 2 roles
    got = {(m.receiver, m.kind) for m in msgs}
    neighbors = {"n0_1", "n2_1", "n1_0", "n1_2"}
    assert got == {(t, k) for t in neighbors for k in P.KINDS}
    assert all(m.sender == "n1_1" and m.timestamp == 7.0 for m in msgs)


def test_make_outbound_zeta_proportioning():
    # 10 queued split 0.6 straight / 0.4 left between the two exits
    net = validate_network(make_grid(4, 4, left_turn_nodes=("n1_1",)))
    a = P.make_agent(net, "n1_1", _params(), "composite")
    straight = ("n1_0->n1_1", "n1_1->n1_2")
    left = ("n1_0->n1_1", "n1_1->n2_1")
    assert straight in a.turns.zeta and left in a.turns.zeta
    a.turns.zeta[straight] = 0.6
    a.turns.zeta[left] = 0.4
    msgs = P.make_outbound(a, net, {"n1_0->n1_1": 10.0}, 0.0)
    down = {m.receiver: m for m in msgs if m.kind == "to_downstream"}
    assert down["n1_2"].payload_total() == pytest.approx(6.0, abs=1e-12)
    assert down["n2_1"].payload_total() == pytest.approx(4.0, abs=1e-12)


def test_make_outbound_upstream_carries_raw_connecting_queue():
    net = _arterial()
    a = P.make_agent(net, "n0_1", _params(), "composite")
    msgs = P.make_outbound(a, net, {"n0_0->n0_1": 6.0, "be0->n0_1": 9.0}, 3.0)
    up = [m for m in msgs if m.kind == "to_upstream" and m.receiver == "n0_0"]
    assert len(up) == 1
    assert up[0].payload == (("n0_0->n0_1", 6.0),)


def test_messages_are_immutable():
    m = P.make_message("a", "b", "to_upstream", {"l": 1.0}, [0.5, 0.5], 0.0)
    with pytest.raises(AttributeError):
        m.timestamp = 5.0


# -- ingest -----------------------------------------------------------------

def test_ingest_empty_is_noop():
    net = _arterial()
    a = P.make_agent(net, "n0_0", _params(), "composite")
    before = dict(a.inbox)
    P.ingest(a, [])
    assert a.inbox == before and a.rejected == 0


def test_ingest_last_writer_wins():
    net = _arterial()
    a = P.make_agent(net, "n0_0", _params(), "composite")
    old = P.make_message("n0_1", "n0_0", "to_upstream", {"x": 1.0},
                         [0.5, 0.5], 1.0)
    new = P.make_message("n0_1", "n0_0", "to_upstream", {"x": 2.0},
                         [0.5, 0.5], 4.0)
    P.ingest(a, [old, new])
    assert a.inbox[("n0_1", "to_upstream")] is new
    b = P.make_agent(net, "n0_0", _params(), "composite")
    P.ingest(b, [new, old])  # reversed arrival order, same winner
    assert b.inbox[("n0_1", "to_upstream")] is new


def test_ingest_rejects_malformed_and_counts():
    net = _arterial()
    a = P.make_agent(net, "n0_0", _params(), "composite")
    bad = [
        P.make_message("n0_1", "n0_0", "sideways", {"x": 1.0}, [1.0], 0.0),
        P.make_message("n0_1", "elsewhere", "to_upstream", {}, [1.0], 0.0),
        P.make_message("n0_1", "n0_0", "to_upstream", {"x": -3.0}, [1.0], 0.0),
        P.make_message("n0_1", "n0_0", "to_upstream", {}, [0.9, 0.4], 0.0),
        P.make_message("n0_1", "n0_0", "to_upstream", {}, [1.0], math.nan),
        P.make_message("n0_1", "n0_0", "to_upstream", {}, [], 0.0),
    ]
    P.ingest(a, bad)
    assert a.rejected == len(bad)
    assert a.inbox == {}
    for msg in bad:
        assert P.validate_message(msg, "n0_0") is not None
    ok = P.make_message("n0_1", "n0_0", "to_upstream", {"x": 0.0}, [1.0], 0.0)
    assert P.validate_message(ok, "n0_0") is None


# -- neighbor contributions and staleness ------------------------------------

def _inbound_pair(q_down=7.0, q_up=6.0, ts=0.0):
    down = P.make_message("n0_1", "n0_0", "to_downstream",
                          {"be0->n0_1": q_down}, [1.0, 0.0], ts)
    up = P.make_message("n0_1", "n0_0", "to_upstream",
                        {"n0_0->n0_1": q_up}, [1.0, 0.0], ts)
    return [down, up]


def test_replan_uses_fresh_neighbor_terms():
    # 5 local + (7 inbound - 0.5 * 6 backpressure) * mu=1 -> q_hat 9
    net = _arterial()
    a = P.make_agent(net, "n0_0", _params(), "composite", first_replan=10.0)
    P.ingest(a, _inbound_pair(ts=0.0))
    snaps = [LinkSnapshot("bw0->n0_0", 0.5, queued={0: 5})]
    a, dec, _ = P.replan_cycle(a, net, snaps, P.SignalView(0, 2.0), 10.0)
    assert a.mf.q_hat == pytest.approx([9.0, 0.0], abs=1e-12)
    assert dec == 0


def test_stale_messages_contribute_zero():
    # staleness horizon is 3 replan periods = 15 s here
    net = _arterial()
    a = P.make_agent(net, "n0_0", _params(), "composite", first_replan=20.0)
    P.ingest(a, _inbound_pair(ts=0.0))
    a, _, _ = P.replan_cycle(a, net, [], P.SignalView(0, 2.0), 20.0)
    assert a.mf.q_hat == pytest.approx([0.0, 0.0], abs=0.0)
    assert np.array_equal(a.mf.mu, np.array([0.5, 0.5]))


def test_local_queue_mode_ignores_neighbors():
    net = _arterial()
    snaps = [LinkSnapshot("bw0->n0_0", 0.5, queued={0: 5})]
    loc = P.make_agent(net, "n0_0", _params(), "local_queue")
    P.ingest(loc, _inbound_pair())
    loc, _, _ = P.replan_cycle(loc, net, snaps, P.SignalView(0, 2.0), 0.0)
    assert loc.mf.q_hat == pytest.approx([5.0, 0.0], abs=0.0)
    com = P.make_agent(net, "n0_0", _params(), "composite")
    P.ingest(com, _inbound_pair())
    com, _, _ = P.replan_cycle(com, net, snaps, P.SignalView(0, 2.0), 0.0)
    assert com.mf.q_hat[0] > loc.mf.q_hat[0]


# -- replan_cycle behavior ---------------------------------------------------

def test_replan_zero_traffic_holds_current_phase():
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite")
    a, dec, msgs = P.replan_cycle(a, net, [], P.SignalView(1, 8.0), 0.0)
    assert dec == 1
    assert a.schedule is not None and a.schedule.entries == []
    assert np.array_equal(a.mf.mu, np.array([0.5, 0.5]))
    assert msgs == []


def test_replan_heavy_platoon_wins_the_phase():
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite")
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 6},
                          approaching=[(float(i), 0) for i in range(6)])]
    a, dec, _ = P.replan_cycle(a, net, snaps, P.SignalView(1, 10.0), 0.0)
    assert dec == 0
    assert a.mf.mu[0] > 0.5
    assert a.schedule.entries[0].phase == 0


def test_baseline_matches_composite_when_queues_equal():
    net = _single()
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 4}),
             LinkSnapshot("bn->x0", 0.5, queued={1: 4})]
    base = P.make_agent(net, "x0", _params(), "baseline")
    comp = P.make_agent(net, "x0", _params(), "composite")
    base, dec_b, _ = P.replan_cycle(base, net, snaps, P.SignalView(0, 2.0), 0.0)
    comp, dec_c, _ = P.replan_cycle(comp, net, snaps, P.SignalView(0, 2.0), 0.0)
    assert dec_b == dec_c
    assert [(e.phase, e.ast, e.finish) for e in base.schedule.entries] == \
           [(e.phase, e.ast, e.finish) for e in comp.schedule.entries]
    assert np.array_equal(base.last_weights, np.ones(2))
    assert comp.last_weights == pytest.approx([0.5, 0.5], abs=0.0)


def test_force_uniform_pins_weights_to_baseline():
    net = _single()
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 9}),
             LinkSnapshot("bn->x0", 0.5, queued={1: 1})]
    base = P.make_agent(net, "x0", _params(), "baseline")
    comp = P.make_agent(net, "x0", _params(), "composite")
    base, dec_b, _ = P.replan_cycle(base, net, snaps, P.SignalView(1, 4.0), 0.0)
    comp, dec_c, _ = P.replan_cycle(comp, net, snaps, P.SignalView(1, 4.0), 0.0,
                                    force_uniform=True)
    assert np.array_equal(comp.last_weights, np.ones(2))
    assert dec_b == dec_c
    assert [(e.phase, e.ast) for e in base.schedule.entries] == \
           [(e.phase, e.ast) for e in comp.schedule.entries]


def test_replan_failsafe_holds_on_scheduler_error(monkeypatch):
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite")

    def boom(inp):
        raise SchedulingError("forced for the test")

    monkeypatch.setattr(P, "schedule", boom)
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 3})]
    a, dec, _ = P.replan_cycle(a, net, snaps, P.SignalView(1, 9.0), 0.0)
    assert dec == 1
    assert a.schedule is None


def test_replan_failsafe_respects_max_green(monkeypatch):
    # even with scheduling broken, a saturated green must yield when the
    # other phase has demand
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite")
    monkeypatch.setattr(
        P, "schedule",
        lambda inp: (_ for _ in ()).throw(SchedulingError("boom")))
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 3})]
    a, dec, _ = P.replan_cycle(a, net, snaps, P.SignalView(1, 60.0), 0.0)
    assert dec == 0


def test_guard_decision_rules():
    sig_run = P.SignalView(phase=0, elapsed_green=60.0)
    # saturated green with waiting demand elsewhere is forced off
    assert P._guard_decision(0, sig_run, 60.0, 0.0, [5, 3], [5.0, 3.0]) == 1
    # no demand elsewhere: holding is fine
    assert P._guard_decision(0, sig_run, 60.0, 0.0, [5, 0], [5.0, 0.0]) == 0
    # min-green pins an early switch
    young = P.SignalView(phase=0, elapsed_green=2.0)
    assert P._guard_decision(1, young, 60.0, 5.0, [1, 9], [1.0, 9.0]) == 0
    # during changeover the scheduler's word stands
    mid = P.SignalView(phase=0, elapsed_green=0.0, in_changeover=True,
                       pending=1)
    assert P._guard_decision(1, mid, 60.0, 5.0, [1, 9], [1.0, 9.0]) == 1


def test_replan_advances_timer_and_due():
    net = _single()
    a = P.make_agent(net, "x0", _params(), "composite", first_replan=2.0)
    assert not P.due(a, 1.0)
    assert P.due(a, 2.0)
    a, _, _ = P.replan_cycle(a, net, [], P.SignalView(0, 0.0), 2.0)
    assert a.next_replan == 7.0
    a, _, _ = P.replan_cycle(a, net, [], P.SignalView(0, 0.0), 23.0)
    assert a.next_replan == 27.0  # catches up over missed boundaries


# -- turning-proportion windows ----------------------------------------------

def test_turn_window_rolls_with_ema():
    net = validate_network(make_grid(4, 4, left_turn_nodes=("n1_1",)))
    a = P.make_agent(net, "n1_1", _params(), "composite")
    straight = ("n1_0->n1_1", "n1_1->n1_2")
    left = ("n1_0->n1_1", "n1_1->n2_1")
    P.observe_turn_events(a, [straight] * 8 + [left] * 2)
    a, _, _ = P.replan_cycle(a, net, [], P.SignalView(0, 0.0), 60.0)
    assert a.turns.zeta[straight] == pytest.approx(0.53, abs=1e-12)
    assert a.turns.zeta[left] == pytest.approx(0.47, abs=1e-12)
    assert a.turn_events == []
    # an empty window keeps the estimate
    a, _, _ = P.replan_cycle(a, net, [], P.SignalView(0, 0.0), 120.0)
    assert a.turns.zeta[straight] == pytest.approx(0.53, abs=1e-12)


# -- fixed-time mode ----------------------------------------------------------

def test_fixed_cycle_phase_walk():
    greens, c = [24.0, 16.0], 4.0
    expect = [(0.0, 0), (23.9, 0), (24.0, 1), (27.9, 1), (28.0, 1),
              (43.9, 1), (44.0, 0), (47.9, 0), (48.0, 0), (72.0, 1),
              (96.0, 0)]
    for clock, phase in expect:
        assert P.fixed_cycle_phase(greens, c, clock) == phase, clock


def test_fixed_time_replan_uses_cycle_and_stays_silent():
    net = _single()
    params = _params(fixed_greens={"*": [24.0, 16.0]})
    a = P.make_agent(net, "x0", params, "fixed_time")
    snaps = [LinkSnapshot("bw->x0", 0.5, queued={0: 50})]
    a, dec, msgs = P.replan_cycle(a, net, snaps, P.SignalView(0, 30.0), 30.0)
    assert dec == 1  # cycle position, demand ignored
    assert msgs == [] and a.schedule is None


def test_fixed_time_requires_greens():
    net = _single()
    a = P.make_agent(net, "x0", _params(), "fixed_time")
    with pytest.raises(ValueError, match="fixed_greens"):
        P.replan_cycle(a, net, [], P.SignalView(0, 0.0), 0.0)
    bad = _params(fixed_greens={"*": [10.0, 10.0, 10.0]})
    b = P.make_agent(net, "x0", bad, "fixed_time")
    with pytest.raises(ValueError, match="phases"):
        P.replan_cycle(b, net, [], P.SignalView(0, 0.0), 0.0)


def test_make_agent_rejects_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        P.make_agent(_single(), "x0", _params(), "psychic")


# -- transport ----------------------------------------------------------------

def test_transport_delay_and_conservation():
    tr = P.Transport(dt=1.0, delay_steps=1)
    msgs = P.make_outbound(
        P.make_agent(_arterial(), "n0_0", _params(), "composite"),
        _arterial(), {"bw0->n0_0": 2.0}, 0.0)
    assert len(msgs) == 2
    tr.send(msgs, now=0.0)
    assert tr.deliver_due(0.0) == []
    assert tr.in_flight() == 2 and tr.conserved()
    got = tr.deliver_due(1.0)
    assert [m.kind for m in got] == [m.kind for m in msgs]
    assert tr.in_flight() == 0 and tr.conserved()
    assert (tr.sent, tr.delivered, tr.dropped) == (2, 2, 0)


def test_transport_loss_is_seeded_and_conserved():
    def run(seed):
        tr = P.Transport(dt=1.0, delay_steps=0, loss_prob=0.4,
                         rng=np.random.default_rng(seed))
        m = P.make_message("a", "b", "to_upstream", {"x": 1.0}, [1.0], 0.0)
        tr.send([m] * 50, now=0.0)
        got = tr.deliver_due(0.0)
        assert tr.conserved()
        assert tr.sent == 50 and tr.dropped == 50 - len(got)
        return len(got), tr.dropped

    assert run(5) == run(5)
    assert run(5) != run(6)
    assert run(5)[1] > 0


def test_transport_rejects_bad_config():
    with pytest.raises(ValueError, match="rng"):
        P.Transport(dt=1.0, loss_prob=0.5)
    with pytest.raises(ValueError, match="loss_prob"):
        P.Transport(dt=1.0, loss_prob=1.5, rng=np.random.default_rng(0))


# -- round-order independence --------------------------------------------------

def test_round_order_shuffle_independence():
    net = validate_network(make_grid(3, 3))
    params = _params()
    rng = np.random.default_rng(33)
    snaps = {
        s: [LinkSnapshot(l, 0.5,
                         queued={p: int(rng.integers(0, 9))
                                 for p in range(2)})
            for l in net.in_links[s]]
        for s in net.intersections
    }
    # one seeding round produces the shared message pool
    seed_agents = {s: P.make_agent(net, s, params, "composite")
                   for s in net.intersections}
    pool = []
    for s in sorted(seed_agents):
        _, _, msgs = P.replan_cycle(seed_agents[s], net, snaps[s],
                                    P.SignalView(0, 1.0), 0.0)
        pool.extend(msgs)

    def run_round(order):
        agents = {s: P.make_agent(net, s, params, "composite",
                                  first_replan=5.0)
                  for s in net.intersections}
        for m in pool:
            P.ingest(agents[m.receiver], [m])
        decisions, outbox = {}, []
        for s in order:
            _, dec, msgs = P.replan_cycle(agents[s], net, snaps[s],
                                          P.SignalView(0, 6.0), 5.0)
            decisions[s] = dec
            outbox.extend(msgs)
        return decisions, sorted(outbox, key=lambda m: (m.sender, m.receiver,
                                                        m.kind))

    base = run_round(sorted(net.intersections))
    shuffle_rng = np.random.default_rng(1)
    for _ in range(5):
        order = list(net.intersections)
        shuffle_rng.shuffle(order)
        assert run_round(order) == base


# -- trace rows ----------------------------------------------------------------

def test_messages_to_csv_rows():
    m = P.make_message("a", "b", "to_downstream", {"x": 1.5, "y": 2.0},
                       [0.25, 0.75], 12.0)
    rows = P.messages_to_csv_rows([m])
    assert rows[0] == ("time", "sender", "receiver", "kind",
                       "payload_total", "mu")
    assert rows[1] == ("12.0", "a", "b", "to_downstream", "3.5", "0.25;0.75")
