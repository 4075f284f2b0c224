"""Reference scenario builders.

Four scenarios ship with the package:

    - ``single``: one 2-phase intersection fed from four boundary approaches.
    - ``arterial2``: two intersections on a shared east-west arterial with
      minor cross streets.
    - ``grid4x4``: a 4x4 grid of 2-phase intersections, through movements
      only, with the three-tier demand ramp used by the comparative
      experiments.  Row (east-west) traffic is heavier than column traffic and
      one row is heavier still, which concentrates load on a few nodes;
      column links are short, so underserved cross streets spill back.
    - ``grid4x4_mixed``: the same grid with two 3-phase intersections that add
      protected left-turn movements and route-policy turns.

Grid coordinates: rows run south to north (r = 0 at the bottom), columns west
to east (c = 0 at the left).  Node ids are ``n{r}_{c}``; boundary nodes are
``bw{r}``/``be{r}`` at row ends and ``bs{c}``/``bn{c}`` at column ends.  Link
ids are ``"{src}->{dst}"``.  Row links carry orientation tag "h", column links
"v"; 2-phase nodes serve "h" movements in phase 0 and "v" movements in phase 1.
"""

from __future__ import annotations

import os
from typing import Dict, List, Optional, Sequence, Tuple

from .network import (
    DemandProfile,
    GlobalParams,
    IntersectionSpec,
    LinkSpec,
    NetworkSpec,
    PhaseSpec,
    validate_network,
)

Interval = Tuple[float, float, float]

# The demand ramp shape scaled onto the desk-size grid: three piecewise
# constant tiers (low / medium / high), compressed to a 2400 s run.
RAMP_RATES_VPH = (236.0, 354.0, 528.0)
RAMP_TIERS = ((0.0, 600.0), (600.0, 1200.0), (1200.0, 3000.0))


def ramp_schedule(scale: float = 1.0,
                  tiers: Sequence[Tuple[float, float]] = RAMP_TIERS,
                  rates: Sequence[float] = RAMP_RATES_VPH) -> List[Interval]:
    return [(t0, t1, rate * scale) for (t0, t1), rate in zip(tiers, rates)]


def flat_schedule(rate_vph: float, duration: float = 2400.0) -> List[Interval]:
    return [(0.0, duration, rate_vph)]


def _link(src: str, dst: str, length: float, ffs: float, sat: float,
          cap: int, orientation: str) -> LinkSpec:
    return LinkSpec(id=f"{src}->{dst}", from_node=src, to_node=dst,
                    length=length, free_flow_speed=ffs, saturation_rate=sat,
                    capacity=cap, orientation=orientation)


def make_single_intersection(
    schedule_h: Optional[List[Interval]] = None,
    schedule_v: Optional[List[Interval]] = None,
    length: float = 200.0,
    ffs: float = 12.0,
    sat: float = 0.5,
    capacity: int = 30,
    changeover: float = 4.0,
    max_green: float = 50.0,
    params: Optional[GlobalParams] = None,
) -> NetworkSpec:
    """One 2-phase intersection, four approaches, through movements only."""
    x = "x0"
    boundaries = ["bw", "be", "bn", "bs"]
    links = [
        _link("bw", x, length, ffs, sat, capacity, "h"),
        _link(x, "be", length, ffs, sat, capacity, "h"),
        _link("be", x, length, ffs, sat, capacity, "h"),
        _link(x, "bw", length, ffs, sat, capacity, "h"),
        _link("bn", x, length, ffs, sat, capacity, "v"),
        _link(x, "bs", length, ffs, sat, capacity, "v"),
        _link("bs", x, length, ffs, sat, capacity, "v"),
        _link(x, "bn", length, ffs, sat, capacity, "v"),
    ]
    phases = [
        PhaseSpec(0, [(f"bw->{x}", f"{x}->be"), (f"be->{x}", f"{x}->bw")], "h"),
        PhaseSpec(1, [(f"bn->{x}", f"{x}->bs"), (f"bs->{x}", f"{x}->bn")], "v"),
    ]
    inter = IntersectionSpec(id=x, phases=phases, changeover_time=changeover,
                             max_green=max_green)
    demand = []
    if schedule_h:
        demand.append(DemandProfile(source=f"bw->{x}", schedule=schedule_h))
        demand.append(DemandProfile(source=f"be->{x}", schedule=schedule_h))
    if schedule_v:
        demand.append(DemandProfile(source=f"bn->{x}", schedule=schedule_v))
        demand.append(DemandProfile(source=f"bs->{x}", schedule=schedule_v))
    return NetworkSpec(intersections=[inter], links=links, demand=demand,
                       params=params or GlobalParams(), boundaries=boundaries)


def _grid_nodes(rows: int, cols: int) -> List[str]:
    return [f"n{r}_{c}" for r in range(rows) for c in range(cols)]


def _grid_links(rows: int, cols: int, row_len: float, col_len: float,
                ffs: float, sat: float, row_cap: int, col_cap: int
                ) -> Tuple[List[LinkSpec], List[str]]:
    links: List[LinkSpec] = []
    boundaries: List[str] = []

    def node(r: int, c: int) -> str:
        return f"n{r}_{c}"

    for r in range(rows):
        boundaries += [f"bw{r}", f"be{r}"]
        chain = [f"bw{r}"] + [node(r, c) for c in range(cols)] + [f"be{r}"]
        for a, b in zip(chain, chain[1:]):
            links.append(_link(a, b, row_len, ffs, sat, row_cap, "h"))
            links.append(_link(b, a, row_len, ffs, sat, row_cap, "h"))
    for c in range(cols):
        boundaries += [f"bs{c}", f"bn{c}"]
        chain = [f"bs{c}"] + [node(r, c) for r in range(rows)] + [f"bn{c}"]
        for a, b in zip(chain, chain[1:]):
            links.append(_link(a, b, col_len, ffs, sat, col_cap, "v"))
            links.append(_link(b, a, col_len, ffs, sat, col_cap, "v"))
    return links, boundaries


def _through_phases(node: str, rows: int, cols: int) -> List[PhaseSpec]:
    r, c = (int(p) for p in node[1:].split("_"))
    west = f"bw{r}" if c == 0 else f"n{r}_{c - 1}"
    east = f"be{r}" if c == cols - 1 else f"n{r}_{c + 1}"
    south = f"bs{c}" if r == 0 else f"n{r - 1}_{c}"
    north = f"bn{c}" if r == rows - 1 else f"n{r + 1}_{c}"
    h = PhaseSpec(0, [(f"{west}->{node}", f"{node}->{east}"),
                      (f"{east}->{node}", f"{node}->{west}")], "h")
    v = PhaseSpec(1, [(f"{south}->{node}", f"{node}->{north}"),
                      (f"{north}->{node}", f"{node}->{south}")], "v")
    return [h, v]


def _left_turn_phases(node: str, rows: int, cols: int) -> List[PhaseSpec]:
    """3-phase layout: EW through, NS through, protected EW lefts."""
    r, c = (int(p) for p in node[1:].split("_"))
    west = f"bw{r}" if c == 0 else f"n{r}_{c - 1}"
    east = f"be{r}" if c == cols - 1 else f"n{r}_{c + 1}"
    south = f"bs{c}" if r == 0 else f"n{r - 1}_{c}"
    north = f"bn{c}" if r == rows - 1 else f"n{r + 1}_{c}"
    h = PhaseSpec(0, [(f"{west}->{node}", f"{node}->{east}"),
                      (f"{east}->{node}", f"{node}->{west}")], "h")
    v = PhaseSpec(1, [(f"{south}->{node}", f"{node}->{north}"),
                      (f"{north}->{node}", f"{node}->{south}")], "v")
    # left turn from the west approach heads north; from the east approach, south
    l = PhaseSpec(2, [(f"{west}->{node}", f"{node}->{north}"),
                      (f"{east}->{node}", f"{node}->{south}")], "l")
    return [h, v, l]


def make_grid(
    rows: int = 4,
    cols: int = 4,
    row_schedules: Optional[List[List[Interval]]] = None,
    col_schedules: Optional[List[List[Interval]]] = None,
    row_len: float = 200.0,
    col_len: float = 140.0,
    ffs: float = 12.0,
    sat: float = 0.5,
    row_cap: int = 30,
    col_cap: int = 14,
    changeover: float = 4.0,
    max_green: float = 50.0,
    min_green: float = 0.0,
    left_turn_nodes: Sequence[str] = (),
    turn_prob: float = 0.2,
    direction_split: float = 0.5,
    params: Optional[GlobalParams] = None,
) -> NetworkSpec:
    """Build a rows x cols grid, optionally with 3-phase left-turn nodes.

    ``row_schedules[r]`` feeds both ends of row r (eastbound and westbound
    entries); ``col_schedules[c]`` likewise for column c.  Without schedules a
    zero-demand network is returned.  ``left_turn_nodes`` become 3-phase with
    protected lefts taken with probability ``turn_prob``.

    ``direction_split`` skews each axis while keeping its total: the west and
    south entries carry ``2 * split`` times their schedule, the opposite ends
    ``2 * (1 - split)`` times.  The default 0.5 leaves both ends as given.
    """
    links, boundaries = _grid_links(rows, cols, row_len, col_len, ffs, sat,
                                    row_cap, col_cap)
    left_set = set(left_turn_nodes)
    intersections = []
    for node in _grid_nodes(rows, cols):
        phases = (_left_turn_phases(node, rows, cols) if node in left_set
                  else _through_phases(node, rows, cols))
        intersections.append(IntersectionSpec(
            id=node, phases=phases, changeover_time=changeover,
            max_green=max_green, min_green=min_green))

    # route policy rows are only needed where an in-link has several options
    policy: Dict[str, Dict[str, Dict[str, float]]] = {}
    for inter in intersections:
        if inter.id not in left_set:
            continue
        outs_of: Dict[str, List[str]] = {}
        left_out: Dict[str, str] = {}
        for phase in inter.phases:
            for (in_id, out_id) in phase.movements:
                outs_of.setdefault(in_id, []).append(out_id)
                if phase.edge_class == "l":
                    left_out[in_id] = out_id
        rows_with_choice = {
            in_id: {out_id: (turn_prob if out_id == left_out.get(in_id)
                             else 1.0 - turn_prob)
                    for out_id in outs}
            for in_id, outs in outs_of.items() if len(outs) > 1
        }
        if rows_with_choice:
            policy[inter.id] = rows_with_choice

    if not (0.0 < direction_split < 1.0):
        raise ValueError("direction_split must be in (0, 1)")

    def skew(sched: List[Interval], factor: float) -> List[Interval]:
        if factor == 1.0:
            return sched
        return [(t0, t1, rate * factor) for (t0, t1, rate) in sched]

    fwd, bwd = 2.0 * direction_split, 2.0 * (1.0 - direction_split)
    demand: List[DemandProfile] = []
    if row_schedules:
        for r in range(rows):
            sched = row_schedules[r]
            if not sched:
                continue
            demand.append(DemandProfile(source=f"bw{r}->n{r}_0",
                                        schedule=skew(sched, fwd),
                                        route_policy=policy))
            demand.append(DemandProfile(source=f"be{r}->n{r}_{cols - 1}",
                                        schedule=skew(sched, bwd),
                                        route_policy=policy))
    if col_schedules:
        for c in range(cols):
            sched = col_schedules[c]
            if not sched:
                continue
            demand.append(DemandProfile(source=f"bs{c}->n0_{c}",
                                        schedule=skew(sched, fwd),
                                        route_policy=policy))
            demand.append(DemandProfile(source=f"bn{c}->n{rows - 1}_{c}",
                                        schedule=skew(sched, bwd),
                                        route_policy=policy))

    return NetworkSpec(intersections=intersections, links=links,
                       demand=demand, params=params or GlobalParams(),
                       boundaries=boundaries)


def make_arterial2(
    schedule_main: Optional[List[Interval]] = None,
    schedule_cross: Optional[List[Interval]] = None,
    params: Optional[GlobalParams] = None,
) -> NetworkSpec:
    """Two 2-phase intersections joined by an east-west arterial."""
    spec = make_grid(rows=1, cols=2,
                     row_schedules=[schedule_main or []],
                     col_schedules=[schedule_cross or [], schedule_cross or []],
                     row_len=250.0, col_len=150.0, row_cap=35, col_cap=16,
                     params=params)
    return spec


# -- shipped reference scenarios ------------------------------------------


def reference_single() -> NetworkSpec:
    return make_single_intersection(
        schedule_h=ramp_schedule(1.2),
        schedule_v=ramp_schedule(0.6),
        params=GlobalParams(seed=7),
    )


def reference_arterial2() -> NetworkSpec:
    return make_arterial2(
        schedule_main=ramp_schedule(1.2),
        schedule_cross=ramp_schedule(0.5),
        params=GlobalParams(seed=7),
    )


def reference_grid() -> NetworkSpec:
    """The comparative-experiment grid: a 4x4 arterial network under
    noisy detection.

    Row 1 is a dominant eastbound arterial (double demand, 65/35
    directional split) crossing streets of descending weight; row links
    are short with tight storage, so the peak tier spills back. Detector
    readings carry a false-call noise floor (std 1.4 vehicles per
    approach per phase), which is the regime the damped phase-weighting
    layer is built for: plans are recomputed every 10 s from corrupted
    counts, and the control modes differ only in how they filter them.
    Recommended horizon: 4200 s (demand ends at 3000 s, leaving a flush
    window) with a 300 s warmup.
    """
    row_scales = [1.0, 2.0, 1.0, 0.7]
    col_scales = [0.12, 0.4, 0.3, 0.25]
    return make_grid(
        rows=4, cols=4,
        row_schedules=[ramp_schedule(s) for s in row_scales],
        col_schedules=[ramp_schedule(s) for s in col_scales],
        row_len=90.0, row_cap=11,
        direction_split=0.65, min_green=6.0,
        params=GlobalParams(seed=7, stability_epsilon=None,
                            queue_noise_std=1.4, replan_period=10.0,
                            fixed_greens={"*": [24.0, 16.0]}),
    )


def reference_grid_mixed() -> NetworkSpec:
    """The grid variant with two 3-phase (protected-left) intersections."""
    row_scales = [1.0, 1.45, 1.0, 0.85]
    col_scales = [0.55, 0.75, 0.55, 0.45]
    return make_grid(
        rows=4, cols=4,
        row_schedules=[ramp_schedule(s) for s in row_scales],
        col_schedules=[ramp_schedule(s) for s in col_scales],
        left_turn_nodes=("n1_1", "n2_2"),
        turn_prob=0.2,
        params=GlobalParams(seed=7, fixed_greens={"*": [22.0, 14.0, 8.0]}),
    )


def reference_stability_grid() -> NetworkSpec:
    """Admissible-demand grid for the queue-stability check.

    Per-approach arrival stays well under saturation times any reasonable
    green share, with margin epsilon declared in the params.
    """
    spec = make_grid(
        rows=4, cols=4,
        row_schedules=[flat_schedule(300.0, 2100.0)] * 4,
        col_schedules=[flat_schedule(220.0, 2100.0)] * 4,
        params=GlobalParams(seed=11, stability_epsilon=0.05),
    )
    return spec


REFERENCE_BUILDERS = {
    "single": reference_single,
    "arterial2": reference_arterial2,
    "grid4x4": reference_grid,
    "grid4x4_mixed": reference_grid_mixed,
    "stability_grid": reference_stability_grid,
}


def write_reference_scenarios(out_dir: str) -> List[str]:
    """Emit every reference scenario as JSON; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, builder in REFERENCE_BUILDERS.items():
        spec = builder()
        validate_network(spec)  # never ship an invalid file
        path = os.path.join(out_dir, f"{name}.json")
        spec.to_json(path)
        paths.append(path)
    return paths
