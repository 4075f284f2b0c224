"""Deterministic mesoscopic traffic simulator.

Vehicles traverse links at free-flow speed, wait in vertical (point) queues
at stop lines, and discharge under green at the link's saturation rate using
a fractional accumulator, so rates below one vehicle per step work without
quantization bias.  The model is deliberately coarse: no car following, no
lane changing; a link is a travel delay plus a FIFO per served phase.

Rules that shape the dynamics:

  - A link never holds more than ``capacity`` vehicles.  A discharging head
    vehicle whose next link is full stays put and blocks its FIFO; the green
    time is consumed regardless (spillback).
  - Entry links that are full push arrivals into an unbounded boundary
    buffer.  Buffered vehicles are injected (FIFO) as room appears and their
    waiting time counts toward delay.  Nothing is ever dropped.
  - Every phase switch passes through an all-red changeover of the
    intersection's ``changeover_time``; the new phase starts discharging on
    the step after the countdown ends.
  - Injection is Poisson per demand profile with piecewise-constant rates in
    vehicles/hour; routes are sampled at multi-option approaches from the
    profile's turn probabilities.  Everything draws from one seeded
    generator, so a (scenario, seed) pair fixes the run bit-for-bit.

Vehicle conservation (injected = on links + buffered + exited) and the
capacity bound are rechecked every step; a violation aborts the run, since
it means the simulator itself is broken.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .clustering import LinkSnapshot
from .network import DemandProfile, Movement, ValidatedNetwork

_EPS = 1e-9
_MAX_ROUTE_HOPS = 100


class SimulationError(RuntimeError):
    pass


@dataclass
class Vehicle:
    id: int
    entry_time: float
    route: List[str]
    route_index: int = 0
    link_entries: List[float] = field(default_factory=list)
    exit_time: Optional[float] = None

    def current_link(self) -> str:
        return self.route[self.route_index]

    def next_link(self) -> Optional[str]:
        if self.route_index + 1 < len(self.route):
            return self.route[self.route_index + 1]
        return None


@dataclass
class SignalState:
    active: int = 0
    elapsed_green: float = 0.0
    in_changeover: bool = False
    remaining: float = 0.0
    pending: int = 0


@dataclass
class DelayRecord:
    vehicle_id: int
    entry_time: float
    exit_time: float
    delay: float


@dataclass
class MetricsSample:
    clock: float
    queue_by_phase: Dict[str, List[int]]
    total_queue: int
    delays: List[DelayRecord]
    injected: int
    exited: int
    buffered: int
    blocked: int


class _LinkState:
    __slots__ = ("moving", "queues")

    def __init__(self, phases: Sequence[int]):
        self.moving: Deque[Tuple[float, int]] = deque()
        self.queues: Dict[int, Deque[int]] = {p: deque() for p in phases}

    def queue_len(self) -> int:
        return sum(len(q) for q in self.queues.values())


class Simulation:
    """Single-run state: construct, drive with step(), read with measure()."""

    def __init__(self, net: ValidatedNetwork, seed: Optional[int] = None):
        self.net = net
        self.dt = net.params.dt
        self.rng = np.random.default_rng(net.params.seed if seed is None else seed)
        self.steps = 0
        self.vehicles: Dict[int, Vehicle] = {}
        self._next_id = 0

        # phases served per incoming link, and serving links per (node, phase)
        self._phases_of_link: Dict[str, List[int]] = {}
        self._serving_links: Dict[Tuple[str, int], List[str]] = {}
        for inter_id, pom in net.phase_of_movement.items():
            for (in_id, _out), p in sorted(pom.items()):
                self._phases_of_link.setdefault(in_id, [])
                if p not in self._phases_of_link[in_id]:
                    self._phases_of_link[in_id].append(p)
                self._serving_links.setdefault((inter_id, p), [])
                if in_id not in self._serving_links[(inter_id, p)]:
                    self._serving_links[(inter_id, p)].append(in_id)
        for plist in self._phases_of_link.values():
            plist.sort()
        for llist in self._serving_links.values():
            llist.sort()

        self.link_states: Dict[str, _LinkState] = {
            lid: _LinkState(self._phases_of_link.get(lid, ()))
            for lid in net.links
        }
        self.occupancy: Dict[str, int] = {lid: 0 for lid in net.links}
        self.acc: Dict[str, float] = {lid: 0.0 for lid in net.links}
        self.buffers: Dict[str, Deque[int]] = {
            lid: deque() for lid in net.entry_links}
        self.signals: Dict[str, SignalState] = {
            iid: SignalState() for iid in net.intersections}
        self._discharge_events: Dict[str, List[Movement]] = {
            iid: [] for iid in net.intersections}

        self.injected = 0
        self.exited = 0
        self.blocked = 0
        self.delay_log: List[DelayRecord] = []
        self._inter_ids = sorted(net.intersections)
        self._link_ids = sorted(net.links)

    # -- clock ---------------------------------------------------------------

    @property
    def clock(self) -> float:
        return self.steps * self.dt

    # -- control interface -----------------------------------------------

    def set_desired_phase(self, inter_id: str, phase: int) -> None:
        sig = self.signals[inter_id]
        num = self.net.num_phases(inter_id)
        if not (0 <= phase < num):
            raise SimulationError(f"{inter_id}: phase {phase} out of range")
        if sig.in_changeover:
            if phase != sig.pending:
                sig.pending = phase
                sig.remaining = self.net.intersections[inter_id].changeover_time
            return
        if phase != sig.active:
            sig.in_changeover = True
            sig.pending = phase
            sig.remaining = self.net.intersections[inter_id].changeover_time

    def green_phase(self, inter_id: str) -> Optional[int]:
        """Currently discharging phase, or None during changeover."""
        sig = self.signals[inter_id]
        return None if sig.in_changeover else sig.active

    # -- vehicle entry -----------------------------------------------------

    def _new_vehicle(self, route: List[str], entry_time: float) -> Vehicle:
        v = Vehicle(id=self._next_id, entry_time=entry_time, route=route)
        self._next_id += 1
        self.vehicles[v.id] = v
        self.injected += 1
        return v

    def _place_on_link(self, v: Vehicle, when: float) -> None:
        lid = v.current_link()
        link = self.net.links[lid]
        v.link_entries.append(when)
        self.link_states[lid].moving.append((when + link.length / link.free_flow_speed, v.id))
        self.occupancy[lid] += 1

    def add_vehicle(self, route: List[str]) -> Vehicle:
        """Inject one vehicle with an explicit route at the current clock."""
        for lid in route:
            if lid not in self.net.links:
                raise SimulationError(f"route names unknown link {lid!r}")
        for a, b in zip(route, route[1:]):
            if self.net.links[a].to_node != self.net.links[b].from_node:
                raise SimulationError(f"route breaks between {a!r} and {b!r}")
        if self.net.links[route[-1]].to_node not in self.net.boundaries:
            raise SimulationError("route must end at a boundary")
        v = self._new_vehicle(list(route), self.clock)
        first = route[0]
        if self.occupancy[first] < self.net.links[first].capacity:
            self._place_on_link(v, self.clock)
        elif first in self.buffers:
            self.buffers[first].append(v.id)
        else:
            raise SimulationError(f"link {first!r} full and not an entry link")
        return v

    def _sample_route(self, profile: DemandProfile) -> List[str]:
        route = [profile.source]
        lid = profile.source
        for _ in range(_MAX_ROUTE_HOPS):
            dest = self.net.links[lid].to_node
            if dest in self.net.boundaries:
                return route
            options = self.net.turn_options[dest][lid]
            if len(options) == 1:
                nxt = options[0]
            else:
                row = profile.route_policy[dest][lid]
                r = float(self.rng.random())
                cum = 0.0
                nxt = options[-1]
                for out in options:
                    cum += row[out]
                    if r < cum:
                        nxt = out
                        break
            route.append(nxt)
            lid = nxt
        raise SimulationError(
            f"route from {profile.source!r} exceeded {_MAX_ROUTE_HOPS} hops")

    @staticmethod
    def _rate_at(profile: DemandProfile, t: float) -> float:
        for (t0, t1, rate) in profile.schedule:
            if t0 <= t < t1:
                return rate
        return 0.0

    def _inject_profile(self, profile: DemandProfile, t_start: float) -> int:
        rate_vph = self._rate_at(profile, t_start)
        if rate_vph <= 0.0:
            return 0
        lam = rate_vph / 3600.0 * self.dt
        n = int(self.rng.poisson(lam))
        now = self.clock
        cap = self.net.links[profile.source].capacity
        for _ in range(n):
            route = self._sample_route(profile)
            v = self._new_vehicle(route, now)
            if self.occupancy[profile.source] < cap:
                self._place_on_link(v, now)
            else:
                self.buffers[profile.source].append(v.id)
        return n

    # -- one step ----------------------------------------------------------

    def step(self, controls: Optional[Dict[str, int]] = None) -> None:
        if controls:
            for inter_id, phase in sorted(controls.items()):
                self.set_desired_phase(inter_id, phase)

        t_start = self.clock
        self.steps += 1
        now = self.clock

        self._advance_signals()
        self._flush_arrivals(now)
        self._discharge(now)
        self._drain_buffers(now)
        for profile in self.net.spec.demand:
            self._inject_profile(profile, t_start)
        self._check_invariants()

    def _advance_signals(self) -> None:
        # a step that starts with the countdown already spent goes green and
        # discharges; the countdown steps themselves are all-red
        for inter_id in self._inter_ids:
            sig = self.signals[inter_id]
            if sig.in_changeover:
                if sig.remaining <= _EPS:
                    sig.in_changeover = False
                    sig.active = sig.pending
                    sig.elapsed_green = self.dt
                else:
                    sig.remaining -= self.dt
            else:
                sig.elapsed_green += self.dt

    def _flush_arrivals(self, now: float) -> None:
        for lid in self._link_ids:
            ls = self.link_states[lid]
            if not ls.moving:
                continue
            link = self.net.links[lid]
            at_boundary = link.to_node in self.net.boundaries
            while ls.moving and ls.moving[0][0] <= now + _EPS:
                arrival, vid = ls.moving.popleft()
                v = self.vehicles[vid]
                if at_boundary:
                    self.occupancy[lid] -= 1
                    v.exit_time = arrival
                    self.exited += 1
                    delay = arrival - v.entry_time - self.net.free_flow_time(v.route)
                    self.delay_log.append(
                        DelayRecord(vid, v.entry_time, arrival, delay))
                else:
                    nxt = v.next_link()
                    if nxt is None:
                        raise SimulationError(
                            f"vehicle {vid} route ends mid-network on {lid!r}")
                    phase = self.net.phase_of_movement[link.to_node][(lid, nxt)]
                    ls.queues[phase].append(vid)

    def _discharge(self, now: float) -> None:
        for inter_id in self._inter_ids:
            sig = self.signals[inter_id]
            green = None if sig.in_changeover else sig.active
            for lid in self.net.in_links[inter_id]:
                if green is None or lid not in self._serving_links.get(
                        (inter_id, green), ()):
                    self.acc[lid] = 0.0
            if green is None:
                continue
            for lid in self._serving_links.get((inter_id, green), ()):
                link = self.net.links[lid]
                fifo = self.link_states[lid].queues[green]
                self.acc[lid] += link.saturation_rate * self.dt
                while self.acc[lid] >= 1.0 - _EPS and fifo:
                    vid = fifo[0]
                    v = self.vehicles[vid]
                    nxt = v.next_link()
                    if (self.occupancy[nxt]
                            >= self.net.links[nxt].capacity):
                        self.blocked += 1
                        break
                    fifo.popleft()
                    self.acc[lid] -= 1.0
                    self.occupancy[lid] -= 1
                    v.route_index += 1
                    self._place_on_link(v, now)
                    self._discharge_events[inter_id].append((lid, nxt))
                if self.acc[lid] > 1.0:
                    self.acc[lid] = 1.0

    def _drain_buffers(self, now: float) -> None:
        for lid in sorted(self.buffers):
            buf = self.buffers[lid]
            cap = self.net.links[lid].capacity
            while buf and self.occupancy[lid] < cap:
                vid = buf.popleft()
                self._place_on_link(self.vehicles[vid], now)

    def _check_invariants(self) -> None:
        on_links = 0
        for lid in self._link_ids:
            ls = self.link_states[lid]
            count = len(ls.moving) + ls.queue_len()
            if count != self.occupancy[lid]:
                raise SimulationError(
                    f"occupancy drift on {lid!r}: counted {count}, "
                    f"tracked {self.occupancy[lid]}")
            if count > self.net.links[lid].capacity:
                raise SimulationError(
                    f"capacity violated on {lid!r}: {count} > "
                    f"{self.net.links[lid].capacity}")
            on_links += count
        buffered = sum(len(b) for b in self.buffers.values())
        if self.injected != on_links + buffered + self.exited:
            raise SimulationError(
                f"conservation violated at t={self.clock}: injected="
                f"{self.injected}, on_links={on_links}, buffered={buffered}, "
                f"exited={self.exited}")

    # -- observation -------------------------------------------------------

    def sense(self, inter_id: str) -> List[LinkSnapshot]:
        """Detector view of every approach: queues by phase, arrival ETAs."""
        now = self.clock
        snaps = []
        for lid in sorted(self.net.in_links[inter_id]):
            ls = self.link_states[lid]
            pom = self.net.phase_of_movement[inter_id]
            approaching = []
            for arrival, vid in ls.moving:
                nxt = self.vehicles[vid].next_link()
                approaching.append((arrival - now, pom[(lid, nxt)]))
            snaps.append(LinkSnapshot(
                link_id=lid,
                saturation_rate=self.net.links[lid].saturation_rate,
                queued={p: len(q) for p, q in ls.queues.items()},
                approaching=approaching))
        return snaps

    def queue_by_phase(self, inter_id: str) -> List[int]:
        counts = [0] * self.net.num_phases(inter_id)
        for lid in self.net.in_links[inter_id]:
            for p, q in self.link_states[lid].queues.items():
                counts[p] += len(q)
        return counts

    def total_queue(self) -> int:
        return sum(self.link_states[lid].queue_len() for lid in self._link_ids)

    def buffered(self) -> int:
        return sum(len(b) for b in self.buffers.values())

    def drain_discharge_events(self, inter_id: str) -> List[Movement]:
        events = self._discharge_events[inter_id]
        self._discharge_events[inter_id] = []
        return events

    def measure(self) -> MetricsSample:
        return MetricsSample(
            clock=self.clock,
            queue_by_phase={iid: self.queue_by_phase(iid)
                            for iid in self._inter_ids},
            total_queue=self.total_queue(),
            delays=list(self.delay_log),
            injected=self.injected,
            exited=self.exited,
            buffered=self.buffered(),
            blocked=self.blocked)


# spec-facing functional entry points; the class methods do the work


def step(state: Simulation, net: ValidatedNetwork = None,
         controls: Optional[Dict[str, int]] = None) -> Simulation:
    state.step(controls)
    return state


def inject_vehicles(state: Simulation, demand: DemandProfile,
                    rng: Optional[np.random.Generator] = None) -> Simulation:
    if rng is not None:
        state.rng = rng
    state._inject_profile(demand, state.clock)
    return state


def measure(state: Simulation) -> MetricsSample:
    return state.measure()
