"""Network model: scenario types, validation, and derived topology tables.

Unit conventions (used consistently across the package):
    - time: seconds
    - distance: meters
    - speed: meters/second
    - flow rates in scenario files: vehicles/hour
    - saturation (discharge) rates: vehicles/second
    - link capacity: vehicles (vertical-queue storage limit)

A scenario is a JSON document with top-level keys ``intersections``, ``links``,
``demand``, ``params`` and ``boundaries``.  Intersections own phases; each phase
is a set of movements, where a movement is an (in_link, out_link) pair.  Links
connect intersections to each other or to declared boundary source/sink nodes.
Demand profiles attach piecewise-constant arrival rates to entry links and carry
per-intersection turn probabilities used to sample vehicle routes.

``validate_network`` checks structural invariants and returns a
``ValidatedNetwork`` with precomputed lookup tables: movement-to-phase maps,
per-phase upstream/downstream neighbor sets, turn options per in-link, and the
neighbor phase matched to each connecting link (used by the coordination layer
to pick which marginal of a neighbor applies to a shared edge).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

Movement = Tuple[str, str]  # (in_link_id, out_link_id)


class NetworkValidationError(ValueError):
    """Raised when a scenario violates a structural invariant."""


@dataclass
class PhaseSpec:
    """One signal phase: the movements it serves and its orientation class."""

    id: int
    movements: List[Movement]
    edge_class: Optional[str] = None  # orientation tag, e.g. "h" / "v"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "movements": [list(m) for m in self.movements],
            "edge_class": self.edge_class,
        }


@dataclass
class IntersectionSpec:
    id: str
    phases: List[PhaseSpec]
    changeover_time: float = 4.0
    max_green: float = 60.0
    min_green: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "phases": [p.to_dict() for p in self.phases],
            "changeover_time": self.changeover_time,
            "max_green": self.max_green,
            "min_green": self.min_green,
        }


@dataclass
class LinkSpec:
    id: str
    from_node: str
    to_node: str
    length: float
    free_flow_speed: float
    saturation_rate: float
    capacity: int
    orientation: Optional[str] = None  # matches PhaseSpec.edge_class, e.g. "h"/"v"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "from": self.from_node,
            "to": self.to_node,
            "length": self.length,
            "free_flow_speed": self.free_flow_speed,
            "saturation_rate": self.saturation_rate,
            "capacity": self.capacity,
            "orientation": self.orientation,
        }


@dataclass
class DemandProfile:
    """Arrival process on one entry link.

    ``schedule`` is a list of (start, end, rate_veh_per_hour) intervals,
    ascending and non-overlapping.  ``route_policy`` maps intersection id ->
    in_link id -> {out_link id: probability}; it may omit in-links that have a
    single turn option.
    """

    source: str  # entry link id
    schedule: List[Tuple[float, float, float]]
    route_policy: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "schedule": [list(iv) for iv in self.schedule],
            "route_policy": self.route_policy,
        }


@dataclass
class GlobalParams:
    """Simulation and control parameters shared by every module.

    ``staleness_periods`` is measured in replan periods; inbound coordination
    state older than that contributes zero (the controller degrades to its
    local-only behavior).  ``message_delay_steps`` is in simulation steps.
    """

    dt: float = 1.0
    horizon: float = 120.0
    replan_period: float = 5.0
    cluster_gap: float = 3.0
    mf_beta: float = 0.1
    mf_damping: float = 0.3
    seed: int = 0
    ema_alpha: float = 0.1
    turn_window: float = 60.0
    staleness_periods: float = 3.0
    message_delay_steps: int = 1
    message_loss_prob: float = 0.0
    weight_floor: float = 1e-3
    queue_noise_std: float = 0.0
    queue_noise_rel: float = 0.0
    warmup: float = 300.0
    stability_epsilon: Optional[float] = None
    fixed_greens: Optional[Dict[str, List[float]]] = None

    def validate(self) -> None:
        if self.dt <= 0:
            raise NetworkValidationError("params.dt must be positive")
        if self.replan_period < self.dt:
            raise NetworkValidationError("params.replan_period must be >= dt")
        if self.horizon < self.replan_period:
            raise NetworkValidationError("params.horizon must be >= replan_period")
        if self.cluster_gap < 0:
            raise NetworkValidationError("params.cluster_gap must be >= 0")
        if self.mf_beta <= 0:
            raise NetworkValidationError("params.mf_beta must be positive")
        if not (0.0 <= self.mf_damping < 1.0):
            raise NetworkValidationError("params.mf_damping must be in [0, 1)")
        if not (0.0 <= self.message_loss_prob <= 1.0):
            raise NetworkValidationError("params.message_loss_prob must be in [0, 1]")
        if self.message_delay_steps < 0:
            raise NetworkValidationError("params.message_delay_steps must be >= 0")
        if not (0.0 < self.ema_alpha <= 1.0):
            raise NetworkValidationError("params.ema_alpha must be in (0, 1]")
        if self.weight_floor <= 0:
            raise NetworkValidationError("params.weight_floor must be positive")
        if self.queue_noise_std < 0 or self.queue_noise_rel < 0:
            raise NetworkValidationError("queue noise terms must be >= 0")
        if self.warmup < 0:
            raise NetworkValidationError("params.warmup must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise NetworkValidationError(f"unknown params keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NetworkSpec:
    """The raw scenario: intersections, links, demand, params, boundaries."""

    intersections: List[IntersectionSpec]
    links: List[LinkSpec]
    demand: List[DemandProfile] = field(default_factory=list)
    params: GlobalParams = field(default_factory=GlobalParams)
    boundaries: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "intersections": [i.to_dict() for i in self.intersections],
            "links": [l.to_dict() for l in self.links],
            "demand": [d.to_dict() for d in self.demand],
            "params": self.params.to_dict(),
            "boundaries": list(self.boundaries),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        required = {"intersections", "links", "demand", "params"}
        missing = required - set(d)
        if missing:
            raise NetworkValidationError(f"scenario missing top-level keys: {sorted(missing)}")
        intersections = [
            IntersectionSpec(
                id=str(i["id"]),
                phases=[
                    PhaseSpec(
                        id=int(p["id"]),
                        movements=[(str(m[0]), str(m[1])) for m in p["movements"]],
                        edge_class=p.get("edge_class"),
                    )
                    for p in i["phases"]
                ],
                changeover_time=float(i.get("changeover_time", 4.0)),
                max_green=float(i.get("max_green", 60.0)),
                min_green=float(i.get("min_green", 0.0)),
            )
            for i in d["intersections"]
        ]
        links = [
            LinkSpec(
                id=str(l["id"]),
                from_node=str(l["from"]),
                to_node=str(l["to"]),
                length=float(l["length"]),
                free_flow_speed=float(l["free_flow_speed"]),
                saturation_rate=float(l["saturation_rate"]),
                capacity=int(l["capacity"]),
                orientation=l.get("orientation"),
            )
            for l in d["links"]
        ]
        demand = [
            DemandProfile(
                source=str(p["source"]),
                schedule=[(float(iv[0]), float(iv[1]), float(iv[2])) for iv in p["schedule"]],
                route_policy={
                    str(n): {str(il): {str(ol): float(pr) for ol, pr in outs.items()}
                             for il, outs in by_in.items()}
                    for n, by_in in p.get("route_policy", {}).items()
                },
            )
            for p in d["demand"]
        ]
        params = GlobalParams.from_dict(d["params"])
        boundaries = [str(b) for b in d.get("boundaries", [])]
        return cls(intersections=intersections, links=links, demand=demand,
                   params=params, boundaries=boundaries)

    @classmethod
    def from_json(cls, path: str) -> "NetworkSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class ValidatedNetwork:
    """A structurally checked scenario with derived lookup tables.

    Attributes of interest:
        spec: the originating NetworkSpec
        intersections / links: id-keyed dicts
        in_links / out_links: per intersection, link ids in declaration order
        phase_of_movement: {intersection: {(in, out): phase index}}
        turn_options: {intersection: {in_link: [out_link, ...]}}
        entry_links / exit_links: links touching boundary nodes
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.params = spec.params
        self.intersections: Dict[str, IntersectionSpec] = {}
        self.links: Dict[str, LinkSpec] = {}
        self.boundaries = set(spec.boundaries)
        self.in_links: Dict[str, List[str]] = {}
        self.out_links: Dict[str, List[str]] = {}
        self.phase_of_movement: Dict[str, Dict[Movement, int]] = {}
        self.turn_options: Dict[str, Dict[str, List[str]]] = {}
        self.entry_links: List[str] = []
        self.exit_links: List[str] = []
        self._neighbor_sets: Dict[Tuple[str, int], Tuple[frozenset, frozenset]] = {}
        self._matched_phase: Dict[Tuple[str, str], Optional[int]] = {}
        self._build()

    # -- construction ------------------------------------------------------

    def _build(self) -> None:
        spec = self.spec
        spec.params.validate()

        for inter in spec.intersections:
            if inter.id in self.intersections:
                raise NetworkValidationError(f"duplicate intersection id {inter.id!r}")
            self.intersections[inter.id] = inter
        for node in self.boundaries:
            if node in self.intersections:
                raise NetworkValidationError(
                    f"node id {node!r} declared both intersection and boundary")

        for link in spec.links:
            if link.id in self.links:
                raise NetworkValidationError(f"duplicate link id {link.id!r}")
            for endpoint in (link.from_node, link.to_node):
                if endpoint not in self.intersections and endpoint not in self.boundaries:
                    raise NetworkValidationError(
                        f"link {link.id!r} has dangling endpoint {endpoint!r} "
                        "(not a declared intersection or boundary)")
            if link.from_node == link.to_node:
                raise NetworkValidationError(f"link {link.id!r} is a self-loop")
            if link.length <= 0:
                raise NetworkValidationError(f"link {link.id!r} has nonpositive length")
            if link.free_flow_speed <= 0:
                raise NetworkValidationError(f"link {link.id!r} has nonpositive free_flow_speed")
            if link.saturation_rate <= 0:
                raise NetworkValidationError(
                    f"link {link.id!r} has nonpositive saturation_rate")
            if link.capacity < 1:
                raise NetworkValidationError(f"link {link.id!r} has capacity < 1")
            self.links[link.id] = link

        for inter_id in self.intersections:
            self.in_links[inter_id] = []
            self.out_links[inter_id] = []
        for link in spec.links:
            if link.to_node in self.intersections:
                self.in_links[link.to_node].append(link.id)
            if link.from_node in self.intersections:
                self.out_links[link.from_node].append(link.id)
            if link.from_node in self.boundaries:
                self.entry_links.append(link.id)
            if link.to_node in self.boundaries:
                self.exit_links.append(link.id)

        for inter in spec.intersections:
            self._check_phases(inter)

        self._check_demand()
        self._precompute_neighbor_sets()
        self._precompute_matched_phases()

    def _check_phases(self, inter: IntersectionSpec) -> None:
        if len(inter.phases) < 2:
            raise NetworkValidationError(
                f"intersection {inter.id!r} must declare at least 2 phases")
        if inter.changeover_time < 0:
            raise NetworkValidationError(
                f"intersection {inter.id!r} has negative changeover_time")
        if inter.max_green <= 0:
            raise NetworkValidationError(f"intersection {inter.id!r} max_green must be > 0")
        if inter.min_green < 0 or inter.min_green > inter.max_green:
            raise NetworkValidationError(
                f"intersection {inter.id!r} min_green must be in [0, max_green]")
        ids = [p.id for p in inter.phases]
        if ids != list(range(len(inter.phases))):
            raise NetworkValidationError(
                f"intersection {inter.id!r} phase ids must be 0..P-1 in order, got {ids}")

        served: Dict[Movement, int] = {}
        for phase in inter.phases:
            if not phase.movements:
                raise NetworkValidationError(
                    f"intersection {inter.id!r} phase {phase.id} serves no movement")
            seen_in_phase = set()
            for mv in phase.movements:
                in_id, out_id = mv
                if mv in seen_in_phase:
                    raise NetworkValidationError(
                        f"intersection {inter.id!r} phase {phase.id} lists movement "
                        f"{mv} twice")
                seen_in_phase.add(mv)
                if in_id not in self.links or out_id not in self.links:
                    raise NetworkValidationError(
                        f"intersection {inter.id!r} movement {mv} references unknown link")
                if self.links[in_id].to_node != inter.id:
                    raise NetworkValidationError(
                        f"intersection {inter.id!r} movement {mv}: {in_id!r} does not "
                        "enter this intersection")
                if self.links[out_id].from_node != inter.id:
                    raise NetworkValidationError(
                        f"intersection {inter.id!r} movement {mv}: {out_id!r} does not "
                        "leave this intersection")
                if mv in served:
                    raise NetworkValidationError(
                        f"intersection {inter.id!r} movement {mv} is multiply served "
                        f"(phases {served[mv]} and {phase.id}); each incoming movement "
                        "must be served by exactly one phase")
                served[mv] = phase.id

        self.phase_of_movement[inter.id] = served
        options: Dict[str, List[str]] = {}
        for (in_id, out_id) in served:
            options.setdefault(in_id, [])
            if out_id not in options[in_id]:
                options[in_id].append(out_id)
        self.turn_options[inter.id] = options

        for in_id in self.in_links[inter.id]:
            if in_id not in options:
                raise NetworkValidationError(
                    f"intersection {inter.id!r}: no movement serves in-link {in_id!r}")

    def _check_demand(self) -> None:
        for prof in self.spec.demand:
            if prof.source not in self.links:
                raise NetworkValidationError(f"demand source {prof.source!r} is not a link")
            if prof.source not in self.entry_links:
                raise NetworkValidationError(
                    f"demand source {prof.source!r} is not an entry link "
                    "(its from-node must be a boundary)")
            prev_end = 0.0
            for (t0, t1, rate) in prof.schedule:
                if t0 < 0 or t1 <= t0:
                    raise NetworkValidationError(
                        f"demand on {prof.source!r}: bad interval ({t0}, {t1})")
                if t0 < prev_end:
                    raise NetworkValidationError(
                        f"demand on {prof.source!r}: overlapping schedule intervals")
                if rate < 0:
                    raise NetworkValidationError(
                        f"demand on {prof.source!r}: negative rate {rate}")
                prev_end = t1
            for node, by_in in prof.route_policy.items():
                if node not in self.intersections:
                    raise NetworkValidationError(
                        f"route_policy references unknown intersection {node!r}")
                for in_id, outs in by_in.items():
                    opts = self.turn_options[node].get(in_id)
                    if opts is None:
                        raise NetworkValidationError(
                            f"route_policy for {node!r}: {in_id!r} is not an in-link")
                    for out_id, pr in outs.items():
                        if out_id not in opts:
                            raise NetworkValidationError(
                                f"route_policy for {node!r}: ({in_id!r}, {out_id!r}) "
                                "is not a declared movement")
                        if pr < 0:
                            raise NetworkValidationError(
                                f"route_policy for {node!r}: negative probability")
                    total = sum(outs.values())
                    if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
                        raise NetworkValidationError(
                            f"route_policy for {node!r} in-link {in_id!r}: probabilities "
                            f"sum to {total!r}, expected 1 within 1e-9")
            # every in-link with more than one turn option needs a policy row
            for node, options in self.turn_options.items():
                for in_id, outs in options.items():
                    if len(outs) > 1:
                        row = prof.route_policy.get(node, {}).get(in_id)
                        if row is None:
                            raise NetworkValidationError(
                                f"demand on {prof.source!r}: intersection {node!r} "
                                f"in-link {in_id!r} has {len(outs)} turn options but "
                                "no route_policy row")

    def _precompute_neighbor_sets(self) -> None:
        for inter_id, inter in self.intersections.items():
            for phase in inter.phases:
                ups = set()
                downs = set()
                for (in_id, out_id) in phase.movements:
                    src = self.links[in_id].from_node
                    dst = self.links[out_id].to_node
                    if src in self.intersections:
                        ups.add(src)
                    if dst in self.intersections:
                        downs.add(dst)
                self._neighbor_sets[(inter_id, phase.id)] = (frozenset(ups), frozenset(downs))

    def _precompute_matched_phases(self) -> None:
        # For every (intersection, incident link): which of the intersection's
        # phases does the link couple to?  Primary rule: the phase whose
        # edge_class equals the link's orientation tag.  Fallback: the
        # lowest-indexed phase serving a movement on the link.  None if neither
        # applies (callers then treat the neighbor marginal as uniform).
        for inter_id, inter in self.intersections.items():
            incident = set(self.in_links[inter_id]) | set(self.out_links[inter_id])
            for link_id in incident:
                orient = self.links[link_id].orientation
                match: Optional[int] = None
                if orient is not None:
                    for phase in inter.phases:
                        if phase.edge_class == orient:
                            match = phase.id
                            break
                if match is None:
                    for phase in inter.phases:
                        for (in_id, out_id) in phase.movements:
                            if in_id == link_id or out_id == link_id:
                                match = phase.id
                                break
                        if match is not None:
                            break
                self._matched_phase[(inter_id, link_id)] = match

    # -- queries -----------------------------------------------------------

    def num_phases(self, inter_id: str) -> int:
        return len(self.intersections[inter_id].phases)

    def neighbor_sets(self, inter_id: str, phase: int) -> Tuple[frozenset, frozenset]:
        """(upstream, downstream) intersection neighbors of one phase.

        Upstream: intersections whose outflow feeds a movement served by this
        phase.  Downstream: intersections receiving this phase's outflow.
        Boundary nodes never appear.
        """
        return self._neighbor_sets[(inter_id, phase)]

    def neighbors(self, inter_id: str) -> frozenset:
        out = set()
        for phase in self.intersections[inter_id].phases:
            up, down = self._neighbor_sets[(inter_id, phase.id)]
            out |= up | down
        return frozenset(out)

    def matched_phase(self, inter_id: str, link_id: str) -> Optional[int]:
        """The phase of ``inter_id`` coupled to incident link ``link_id``."""
        return self._matched_phase.get((inter_id, link_id))

    def connecting_links(self, a: str, b: str) -> Tuple[Optional[str], Optional[str]]:
        """(link b->a, link a->b) ids, or None where absent."""
        into = None
        outof = None
        for lid in self.in_links.get(a, []):
            if self.links[lid].from_node == b:
                into = lid
                break
        for lid in self.out_links.get(a, []):
            if self.links[lid].to_node == b:
                outof = lid
                break
        return into, outof

    def movements_of_phase(self, inter_id: str, phase: int) -> List[Movement]:
        return list(self.intersections[inter_id].phases[phase].movements)

    def free_flow_time(self, route: List[str]) -> float:
        return sum(self.links[lid].length / self.links[lid].free_flow_speed
                   for lid in route)

    def to_dict(self) -> dict:
        return self.spec.to_dict()


def validate_network(spec: NetworkSpec | dict) -> ValidatedNetwork:
    """Check every structural invariant and return the derived network.

    Raises NetworkValidationError with a description of the first violation
    found.  Validation is idempotent: re-validating a re-serialized spec gives
    an identical structure.
    """
    if isinstance(spec, dict):
        spec = NetworkSpec.from_dict(spec)
    return ValidatedNetwork(spec)


def neighbor_sets(net: ValidatedNetwork, inter_id: str, phase: int):
    """Module-level alias for ValidatedNetwork.neighbor_sets."""
    return net.neighbor_sets(inter_id, phase)
