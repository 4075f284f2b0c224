"""Neighbor message passing and the per-intersection replanning agent.

Each intersection runs an isolated agent: it senses its own approaches,
exchanges queue reports with immediate neighbors, folds fresh reports into
effective queues with one damped mean-field update, schedules its phases by
weighted cumulative delay, and adopts the first scheduled action as its
control decision.  Messages are immutable values; delivery goes through an
explicit transport with configurable delay and loss so robustness can be
tested without touching agent code.

An agent only ever reads its own snapshot, its own signal head, and its
inbound message store, so information propagates strictly along links.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .clustering import (
    ClusterSequence,
    LinkSnapshot,
    TurnEstimate,
    build_cluster_sequence,
    estimate_queue,
    perturb_snapshots,
    update_turning_proportions,
)
from .meanfield import (
    DirectionalQueues,
    MeanFieldState,
    NeighborView,
    effective_queues,
    mf_update,
    phase_weights_multi,
    scheduler_weights,
)
from .network import GlobalParams, Movement, ValidatedNetwork
from .scheduling import PhaseSchedule, SchedulerInput, SchedulingError, schedule

MODES = ("fixed_time", "baseline", "local_queue", "composite")

# to_downstream carries proportioned contributions heading onto the
# connecting link; to_upstream carries the raw queue already sitting on it
KINDS = ("to_downstream", "to_upstream")

_EPS = 1e-9


@dataclass(frozen=True)
class QueueMessage:
    """One immutable queue report between adjacent intersections.

    payload maps link ids at the sender to queue values: for to_downstream
    messages, the per-approach contribution expected to head onto the link
    toward the receiver; for to_upstream messages, the raw queue length on
    the link arriving from the receiver.
    """

    sender: str
    receiver: str
    kind: str
    payload: Tuple[Tuple[str, float], ...]
    mu: Tuple[float, ...]
    timestamp: float

    def payload_dict(self) -> Dict[str, float]:
        return dict(self.payload)

    def payload_total(self) -> float:
        return sum(v for _, v in self.payload)


def make_message(sender: str, receiver: str, kind: str,
                 payload: Mapping[str, float], mu: Sequence[float],
                 timestamp: float) -> QueueMessage:
    frozen = tuple(sorted((str(k), float(v)) for k, v in payload.items()))
    return QueueMessage(sender=sender, receiver=receiver, kind=kind,
                        payload=frozen, mu=tuple(float(m) for m in mu),
                        timestamp=float(timestamp))


def validate_message(msg: QueueMessage,
                     expected_receiver: str) -> Optional[str]:
    """None when well formed, else a short reason for rejection."""
    if msg.kind not in KINDS:
        return f"unknown kind {msg.kind!r}"
    if msg.receiver != expected_receiver:
        return f"addressed to {msg.receiver!r}"
    if not math.isfinite(msg.timestamp):
        return "non-finite timestamp"
    for key, val in msg.payload:
        if not math.isfinite(val) or val < 0.0:
            return f"bad payload value for {key!r}"
    if len(msg.mu) == 0:
        return "empty marginals"
    if any(not math.isfinite(m) or m < -_EPS or m > 1.0 + _EPS
           for m in msg.mu):
        return "marginal out of range"
    if abs(sum(msg.mu) - 1.0) > 1e-6:
        return "marginals do not sum to 1"
    return None


@dataclass
class SignalView:
    """What an agent may observe of its own signal head."""

    phase: int
    elapsed_green: float
    in_changeover: bool = False
    pending: int = 0


@dataclass
class AgentState:
    """Mutable per-intersection controller state between replans."""

    inter_id: str
    mode: str
    params: GlobalParams
    turns: TurnEstimate
    mf: MeanFieldState
    schedule: Optional[PhaseSchedule] = None
    next_replan: float = 0.0
    inbox: Dict[Tuple[str, str], QueueMessage] = field(default_factory=dict)
    rejected: int = 0
    turn_events: List[Movement] = field(default_factory=list)
    next_turn_window: float = 0.0
    rng: Optional[np.random.Generator] = None
    last_weights: Optional[np.ndarray] = None
    last_decision: Optional[int] = None
    last_sequences: Optional[List[ClusterSequence]] = None


def make_agent(net: ValidatedNetwork, inter_id: str, params: GlobalParams,
               mode: str, first_replan: float = 0.0,
               rng: Optional[np.random.Generator] = None) -> AgentState:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    num_p = net.num_phases(inter_id)
    mf = MeanFieldState(mu=np.full(num_p, 1.0 / num_p),
                        q_hat=np.zeros(num_p), beta=params.mf_beta)
    return AgentState(inter_id=inter_id, mode=mode, params=params,
                      turns=TurnEstimate(net, inter_id), mf=mf,
                      next_replan=float(first_replan),
                      next_turn_window=params.turn_window, rng=rng)


def due(agent: AgentState, clock: float) -> bool:
    return clock + _EPS >= agent.next_replan


def observe_turn_events(agent: AgentState,
                        events: Sequence[Movement]) -> None:
    agent.turn_events.extend(events)


def make_outbound(agent: AgentState, net: ValidatedNetwork,
                  queue_by_in: Mapping[str, float],
                  clock: float) -> List[QueueMessage]:
    """One message per neighbor role: proportioned reports downstream
    (where this intersection's traffic is headed), raw reports upstream
    (whose traffic queues here)."""
    s = agent.inter_id
    mu = tuple(float(m) for m in agent.mf.mu)
    msgs: List[QueueMessage] = []
    for t in sorted(net.neighbors(s)):
        in_link, out_link = net.connecting_links(s, t)
        if out_link is not None:
            payload = {}
            for in_l in net.in_links[s]:
                share = agent.turns.zeta_share(in_l, out_link)
                if share > 0.0:
                    payload[in_l] = float(queue_by_in.get(in_l, 0.0)) * share
            msgs.append(make_message(s, t, "to_downstream", payload, mu,
                                     clock))
        if in_link is not None:
            payload = {in_link: float(queue_by_in.get(in_link, 0.0))}
            msgs.append(make_message(s, t, "to_upstream", payload, mu,
                                     clock))
    return msgs


def ingest(agent: AgentState,
           messages: Sequence[QueueMessage]) -> AgentState:
    """Fold delivered messages into the inbound store, last writer wins."""
    for msg in messages:
        if validate_message(msg, agent.inter_id) is not None:
            agent.rejected += 1
            continue
        key = (msg.sender, msg.kind)
        prev = agent.inbox.get(key)
        if prev is None or msg.timestamp >= prev.timestamp:
            agent.inbox[key] = msg
    return agent


def _fresh(agent: AgentState, key: Tuple[str, str],
           clock: float) -> Optional[QueueMessage]:
    msg = agent.inbox.get(key)
    if msg is None:
        return None
    horizon = agent.params.staleness_periods * agent.params.replan_period
    if clock - msg.timestamp > horizon + _EPS:
        return None
    return msg


def _neighbor_views(agent: AgentState, net: ValidatedNetwork,
                    clock: float) -> List[NeighborView]:
    """Coupling terms from the inbound store; stale or missing reports
    contribute zero, degrading gracefully to local-only control."""
    s = agent.inter_id
    views: List[NeighborView] = []
    for t in sorted(net.neighbors(s)):
        in_link, out_link = net.connecting_links(s, t)
        coupling = in_link if in_link is not None else out_link
        if coupling is None:
            continue
        phase = net.matched_phase(s, coupling)
        if phase is None:
            continue
        down = _fresh(agent, (t, "to_downstream"), clock)
        up = _fresh(agent, (t, "to_upstream"), clock)
        q_in = down.payload_total() if down is not None else 0.0
        q_out = 0.0
        if out_link is not None and up is not None:
            raw = up.payload_dict().get(out_link, 0.0)
            q_out = agent.turns.eta_share(phase, out_link) * raw
        newest = max((m for m in (down, up) if m is not None),
                     key=lambda m: m.timestamp, default=None)
        mu_t = 0.5
        if newest is not None:
            t_phase = net.matched_phase(t, coupling)
            if t_phase is not None and t_phase < len(newest.mu):
                mu_t = newest.mu[t_phase]
            else:
                mu_t = 1.0 / len(newest.mu)
        views.append(NeighborView(neighbor_id=t, phase=phase, q_in=q_in,
                                  q_out=q_out, mu=mu_t, out_link=out_link))
    return views


def fixed_cycle_phase(greens: Sequence[float], changeover: float,
                      clock: float) -> int:
    """Desired phase of a static cycle; switches at each green's end so the
    changeover is served before the next green."""
    cycle = float(sum(greens)) + changeover * len(greens)
    pos = math.fmod(clock, cycle)
    bound = 0.0
    for p, g in enumerate(greens):
        bound += g if p == 0 else changeover + g
        if pos < bound - _EPS:
            return p
    return 0  # trailing changeover back to the first phase


def _fixed_greens_for(params: GlobalParams, inter_id: str,
                      num_phases: int) -> List[float]:
    table = params.fixed_greens or {}
    greens = table.get(inter_id, table.get("*"))
    if greens is None:
        raise ValueError(f"fixed_time mode needs fixed_greens for {inter_id}")
    if len(greens) != num_phases:
        raise ValueError(f"fixed_greens for {inter_id} has {len(greens)} "
                         f"entries for {num_phases} phases")
    return [float(g) for g in greens]


def _guard_decision(decision: int, signal: SignalView, max_green: float,
                    min_green: float, demand: Sequence[float],
                    q_hat: Sequence[float]) -> int:
    """Unconditional safety net around the scheduler's first action."""
    if signal.in_changeover:
        return decision
    cur = signal.phase
    if decision != cur and signal.elapsed_green + _EPS < min_green:
        return cur
    if decision == cur and signal.elapsed_green + _EPS >= max_green:
        starving = [p for p in range(len(demand))
                    if p != cur and demand[p] > 0]
        if starving:
            return max(starving, key=lambda p: (q_hat[p], -p))
    return decision


def replan_cycle(agent: AgentState, net: ValidatedNetwork,
                 snapshots: Sequence[LinkSnapshot], signal: SignalView,
                 clock: float, force_uniform: bool = False
                 ) -> Tuple[AgentState, int, List[QueueMessage]]:
    """One full control cycle: sense, weight, schedule, act, report.

    Returns the agent (mutated in place), the desired phase, and the
    outbound messages to hand to the transport.  Baseline mode runs the same
    pipeline but schedules with unit weights and leaves the marginals
    untouched; fixed_time ignores sensing entirely.
    """
    params = agent.params
    inter = net.intersections[agent.inter_id]
    num_p = len(inter.phases)

    while clock + _EPS >= agent.next_turn_window:
        update_turning_proportions(agent.turns, agent.turn_events,
                                   params.ema_alpha)
        agent.turn_events.clear()
        agent.next_turn_window += params.turn_window

    while agent.next_replan <= clock + _EPS:
        agent.next_replan += params.replan_period

    if agent.mode == "fixed_time":
        greens = _fixed_greens_for(params, agent.inter_id, num_p)
        decision = fixed_cycle_phase(greens, inter.changeover_time, clock)
        agent.schedule = None
        agent.last_weights = None
        agent.last_decision = decision
        agent.last_sequences = None
        return agent, decision, []

    if params.queue_noise_std > 0.0 or params.queue_noise_rel > 0.0:
        # one corrupted reading feeds clustering, weighting and messaging
        # alike; modes differ only in how they filter it afterwards
        snapshots = perturb_snapshots(snapshots, params.queue_noise_std,
                                      agent.rng, params.queue_noise_rel)
    q_local = [float(estimate_queue(snapshots, p)) for p in range(num_p)]
    sequences = [build_cluster_sequence(snapshots, p, clock, params.horizon,
                                        params.cluster_gap)
                 for p in range(num_p)]

    if agent.mode == "baseline":
        q_hat = list(q_local)
    elif agent.mode == "local_queue":
        q_hat = list(q_local)
        agent.mf = _update_marginals(agent.mf, q_hat, params.mf_damping)
    else:
        views = _neighbor_views(agent, net, clock)
        q_hat = effective_queues(DirectionalQueues(q_local, views))
        agent.mf = _update_marginals(agent.mf, q_hat, params.mf_damping)

    if force_uniform or agent.mode == "baseline":
        weights = np.ones(num_p)
    else:
        weights = scheduler_weights(agent.mf.mu, params.weight_floor)

    current = signal.pending if signal.in_changeover else signal.phase
    elapsed = 0.0 if signal.in_changeover else signal.elapsed_green
    try:
        sched = schedule(SchedulerInput(
            sequences=[seq.clusters for seq in sequences],
            weights=[float(w) for w in weights],
            changeover_time=inter.changeover_time,
            max_green=inter.max_green, min_green=inter.min_green,
            current_phase=current, now=clock, elapsed_green=elapsed))
        decision = sched.first_phase(default=current)
    except SchedulingError:
        sched = None  # fail safe: hold, bounded by the max-green guard
        decision = current

    demand = [seq.total_count() for seq in sequences]
    decision = _guard_decision(decision, signal, inter.max_green,
                               inter.min_green, demand, q_hat)

    agent.schedule = sched
    agent.last_weights = np.asarray(weights, dtype=float)
    agent.last_decision = int(decision)
    agent.last_sequences = sequences

    queue_by_in = {snap.link_id: float(snap.queue_total())
                   for snap in snapshots}
    msgs = make_outbound(agent, net, queue_by_in, clock)
    return agent, int(decision), msgs


def _update_marginals(mf: MeanFieldState, q_hat: Sequence[float],
                      damping: float) -> MeanFieldState:
    """One damped update; two phases use the sigmoid path exactly."""
    if len(q_hat) == 2:
        m = mf_update(q_hat[0], q_hat[1], mf.beta, mu_prev=float(mf.mu[0]),
                      damping=damping)
        mu = np.array([m, 1.0 - m])
    else:
        raw = phase_weights_multi(q_hat, mf.beta)
        mu = (1.0 - damping) * raw + damping * mf.mu
    out = MeanFieldState(mu=mu, q_hat=np.asarray(q_hat, dtype=float),
                         beta=mf.beta)
    out.validate()
    return out


class Transport:
    """Deterministic in-simulator message fabric with delay and loss.

    Every sent message is eventually delivered, still in flight, or counted
    dropped; nothing disappears silently.
    """

    def __init__(self, dt: float, delay_steps: int = 1,
                 loss_prob: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
        if loss_prob > 0.0 and rng is None:
            raise ValueError("loss_prob > 0 needs an rng")
        if not 0.0 <= loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        self.delay = delay_steps * dt
        self.loss_prob = loss_prob
        self.rng = rng
        self._queue: List[Tuple[float, int, QueueMessage]] = []
        self._seq = 0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def send(self, messages: Sequence[QueueMessage], now: float) -> None:
        for msg in messages:
            self.sent += 1
            if self.loss_prob > 0.0 and self.rng.random() < self.loss_prob:
                self.dropped += 1
                continue
            heapq.heappush(self._queue, (now + self.delay, self._seq, msg))
            self._seq += 1

    def deliver_due(self, now: float) -> List[QueueMessage]:
        out: List[QueueMessage] = []
        while self._queue and self._queue[0][0] <= now + _EPS:
            out.append(heapq.heappop(self._queue)[2])
        self.delivered += len(out)
        return out

    def in_flight(self) -> int:
        return len(self._queue)

    def conserved(self) -> bool:
        return self.sent == self.delivered + self.dropped + self.in_flight()


def messages_to_csv_rows(messages: Sequence[QueueMessage]
                         ) -> List[Tuple[str, ...]]:
    """Trace rows (time, sender, receiver, kind, total, mu) for debugging."""
    rows = [("time", "sender", "receiver", "kind", "payload_total", "mu")]
    for m in messages:
        rows.append((repr(m.timestamp), m.sender, m.receiver, m.kind,
                     repr(m.payload_total()),
                     ";".join(repr(x) for x in m.mu)))
    return rows
