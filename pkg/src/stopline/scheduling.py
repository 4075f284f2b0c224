"""Single-machine phase scheduling by forward dynamic programming.

An intersection is treated as one machine that serves jobs ("clusters" of
vehicles) grouped by phase.  The scheduler picks an order-preserving
interleaving of the per-phase cluster sequences minimizing

    sum over clusters c of  count(c) * (ast(c) - arr(c)) * w(phase(c))

where ast is the service start time and w a positive per-phase weight.
Service of a cluster takes dep - arr seconds.  Switching phases inserts the
changeover time before the next service start; the live controller's phase
seeds the initial state, so a schedule that opens with a different phase pays
the changeover up front, while continuing the current phase is free.

Timing rules, shared by the DP and the exhaustive oracle:

    - ast = max(earliest feasible start, arr(c)); no unforced idle ever.
    - same phase as the previous entry: ast = max(free, arr); the green run
      stays alive through any waiting gap (green is held).
    - different phase: ast = max(max(free, run_start + min_green)
      + changeover, arr), and a fresh green run starts at ast.

max_green bounds the length of a continuous green run.  The DP treats it as a
hard constraint with two escape hatches: a cluster whose own service exceeds
max_green may start a fresh run (the outer loop then splits it at the
max_green boundary and re-solves, iterating to a fixed point), and a phase may
be re-served after a changeover-long rest, which resets its run.  With
max_green = inf neither hatch is ever cheaper than plain continuation, so the
unconstrained optimum is unchanged.

``brute_force_schedule`` enumerates every interleaving with its own forward
simulation and never touches the DP internals; it is the test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

_EPS = 1e-9


class SchedulingError(ValueError):
    """Raised for invalid scheduler inputs or a failed split fixed point."""


@dataclass(frozen=True)
class Cluster:
    """A platoon: vehicle count and its arrival/clearance interval.

    count may be fractional after a max-green split; arr <= dep and the
    service duration is dep - arr regardless of when service starts.
    """

    count: float
    arr: float
    dep: float

    @property
    def duration(self) -> float:
        return self.dep - self.arr


@dataclass(frozen=True)
class ScheduleEntry:
    phase: int
    cluster: Cluster
    ast: float
    finish: float
    run_start: float  # start of the green run this entry belongs to
    seq_index: int    # position of the cluster within its phase sequence


@dataclass
class PhaseSchedule:
    """The scheduler's output: ordered entries plus cost bookkeeping."""

    entries: List[ScheduleEntry]
    total_weighted_delay: float
    completion: float
    splits: int = 0

    def first_phase(self, default: int) -> int:
        return self.entries[0].phase if self.entries else default

    def green_runs(self) -> List[Tuple[int, float, float]]:
        """(phase, run_start, run_end) for each continuous green run."""
        runs: List[Tuple[int, float, float]] = []
        for e in self.entries:
            if runs and runs[-1][0] == e.phase and abs(runs[-1][1] - e.run_start) < _EPS:
                runs[-1] = (e.phase, runs[-1][1], e.finish)
            else:
                runs.append((e.phase, e.run_start, e.finish))
        return runs


@dataclass
class SchedulerInput:
    """Everything schedule() needs for one replanning solve.

    sequences[p] holds phase p's clusters sorted by arrival.  elapsed_green is
    how long the current phase has already been green, used to continue its
    run across replans (0 treats the run as freshly started).
    """

    sequences: List[List[Cluster]]
    weights: List[float]
    changeover_time: float
    max_green: float = math.inf
    min_green: float = 0.0
    current_phase: int = 0
    now: float = 0.0
    elapsed_green: float = 0.0


def _validate_input(inp: SchedulerInput) -> None:
    if not inp.sequences:
        raise SchedulingError("no phase sequences given")
    if len(inp.weights) != len(inp.sequences):
        raise SchedulingError("weights and sequences length mismatch")
    for p, w in enumerate(inp.weights):
        if not (w > 0.0):
            raise SchedulingError(f"phase {p} has nonpositive weight {w!r}")
    if inp.changeover_time < 0:
        raise SchedulingError("negative changeover_time")
    if not (inp.max_green > 0):
        raise SchedulingError("max_green must be positive")
    if inp.min_green < 0:
        raise SchedulingError("negative min_green")
    if inp.now < 0:
        raise SchedulingError("negative now")
    if inp.elapsed_green < 0:
        raise SchedulingError("negative elapsed_green")
    if not (0 <= inp.current_phase < len(inp.sequences)):
        raise SchedulingError("current_phase out of range")
    for p, seq in enumerate(inp.sequences):
        prev_arr = -math.inf
        for c in seq:
            if c.count <= 0:
                raise SchedulingError(f"phase {p}: cluster count {c.count!r} <= 0")
            if c.arr < 0 or c.dep < c.arr:
                raise SchedulingError(f"phase {p}: bad cluster times ({c.arr}, {c.dep})")
            if c.arr < prev_arr:
                raise SchedulingError(f"phase {p}: clusters not sorted by arrival")
            prev_arr = c.arr


def cumulative_weighted_delay(entries: Sequence[ScheduleEntry],
                              weights: Sequence[float]) -> float:
    """Recompute the objective from schedule entries, in entry order."""
    total = 0.0
    for e in entries:
        total += e.cluster.count * (e.ast - e.cluster.arr) * weights[e.phase]
    return total


# -- forward DP -------------------------------------------------------------

def _solve_dp(sequences: List[List[Cluster]], inp: SchedulerInput
              ) -> Optional[List[ScheduleEntry]]:
    """Optimal interleaving of `sequences` under the run-length constraint.

    Returns None when no complete schedule exists (can only happen for an
    oversized cluster blocked by a live overlong run, which the split loop
    resolves).
    """
    P = len(sequences)
    lengths = tuple(len(s) for s in sequences)
    total = sum(lengths)
    weights = inp.weights
    changeover = inp.changeover_time
    max_green = inp.max_green
    min_green = inp.min_green
    finite_mg = math.isfinite(max_green)

    init_key = (tuple([0] * P), inp.current_phase)
    # state entries: [cost, free, run_start, parent_key, parent_idx, record]
    init_entry = (0.0, inp.now, inp.now - inp.elapsed_green, None, None, None)
    states: Dict[Tuple[Tuple[int, ...], int], list] = {init_key: [init_entry]}
    level: List[Tuple[Tuple[int, ...], int]] = [init_key]

    def try_insert(key, cand) -> None:
        bucket = states.get(key)
        if bucket is None:
            states[key] = [cand]
            return
        c_cost, c_free, c_run = cand[0], cand[1], cand[2]
        for e in bucket:
            if e[0] <= c_cost and e[1] <= c_free and e[2] >= c_run:
                return  # dominated (ties keep the earlier, deterministic, entry)
        bucket[:] = [e for e in bucket
                     if not (c_cost <= e[0] and c_free <= e[1] and c_run >= e[2])]
        bucket.append(cand)

    for served in range(total):
        next_level: List[Tuple[Tuple[int, ...], int]] = []
        seen_next = set()
        for key in sorted(level):
            counts, last = key
            bucket = states[key]
            for idx, entry in enumerate(bucket):
                cost, free, run_start = entry[0], entry[1], entry[2]
                for p in range(P):
                    k = counts[p]
                    if k >= lengths[p]:
                        continue
                    c = sequences[p][k]
                    new_counts = counts[:p] + (k + 1,) + counts[p + 1:]
                    new_key = (new_counts, p)
                    variants = []
                    if p == last:
                        # continuation: green held, run persists
                        ast = max(free, c.arr)
                        variants.append((ast, run_start))
                        if finite_mg:
                            # rest: changeover-long red, fresh run
                            ast_b = max(max(free, run_start + min_green)
                                        + changeover, c.arr)
                            variants.append((ast_b, ast_b))
                    else:
                        ast = max(max(free, run_start + min_green)
                                  + changeover, c.arr)
                        variants.append((ast, ast))
                    for ast, new_run in variants:
                        finish = ast + (c.dep - c.arr)
                        if finite_mg and finish - new_run > max_green + _EPS:
                            # only a lone oversized cluster on a fresh run may
                            # exceed the bound (split loop will fix it)
                            if not (c.dep - c.arr > max_green and new_run == ast):
                                continue
                        new_cost = cost + c.count * (ast - c.arr) * weights[p]
                        record = (p, c, ast, finish, new_run, k)
                        try_insert(new_key, (new_cost, finish, new_run,
                                             key, idx, record))
                        if new_key not in seen_next:
                            seen_next.add(new_key)
                            next_level.append(new_key)
        level = next_level

    # pick the optimum among complete states
    best = None
    best_key = None
    best_idx = None
    full = tuple(lengths)
    for last in range(P):
        bucket = states.get((full, last))
        if not bucket:
            continue
        for idx, entry in enumerate(bucket):
            rank = (entry[0], entry[1])
            if best is None or rank < best:
                best = rank
                best_key = (full, last)
                best_idx = idx
    if total == 0:
        return []
    if best is None:
        return None

    entries: List[ScheduleEntry] = []
    key, idx = best_key, best_idx
    while key is not None:
        entry = states[key][idx]
        record = entry[5]
        if record is None:
            break
        p, c, ast, finish, run_start, seq_index = record
        entries.append(ScheduleEntry(phase=p, cluster=c, ast=ast, finish=finish,
                                     run_start=run_start, seq_index=seq_index))
        key, idx = entry[3], entry[4]
    entries.reverse()
    return entries


def _split_cluster(c: Cluster, service_offset: float) -> Tuple[Cluster, Cluster]:
    """Split c after `service_offset` seconds of service, conserving count."""
    lam = service_offset / (c.dep - c.arr)
    mid = c.arr + service_offset
    return (Cluster(count=c.count * lam, arr=c.arr, dep=mid),
            Cluster(count=c.count * (1.0 - lam), arr=mid, dep=c.dep))


def schedule(inp: SchedulerInput) -> PhaseSchedule:
    """Minimize cumulative weighted delay over order-preserving interleavings.

    Ties break toward earlier completion, then the deterministic expansion
    order (phases ascending).  If any green run would exceed max_green, the
    offending cluster is split at the max_green boundary and the problem
    re-solved, iterating to a fixed point.
    """
    _validate_input(inp)
    sequences = [list(seq) for seq in inp.sequences]
    splits = 0
    if math.isfinite(inp.max_green):
        total_duration = sum(c.dep - c.arr for seq in sequences for c in seq)
        guard = int(math.ceil(total_duration / inp.max_green)) \
            + sum(len(s) for s in sequences) + 8
    else:
        guard = 1

    for _ in range(guard + 1):
        entries = _solve_dp(sequences, inp)
        if entries is None:
            raise SchedulingError(
                "no feasible schedule under max_green; "
                "an oversized cluster cannot start a fresh run")
        offender = None
        for e in entries:
            if e.finish - e.run_start > inp.max_green + _EPS:
                offender = e
                break
        if offender is None:
            total = cumulative_weighted_delay(entries, inp.weights)
            completion = entries[-1].finish if entries else inp.now
            return PhaseSchedule(entries=entries, total_weighted_delay=total,
                                 completion=completion, splits=splits)
        boundary = offender.run_start + inp.max_green
        service_offset = boundary - offender.ast
        if not (0.0 < service_offset < offender.cluster.duration):
            raise SchedulingError(
                f"degenerate split point {service_offset!r} for cluster "
                f"{offender.cluster} (max_green={inp.max_green})")
        c1, c2 = _split_cluster(offender.cluster, service_offset)
        seq = sequences[offender.phase]
        seq[offender.seq_index:offender.seq_index + 1] = [c1, c2]
        splits += 1
    raise SchedulingError(
        f"max_green splitting did not reach a fixed point within {guard} rounds")


# -- exhaustive oracle ------------------------------------------------------

def brute_force_schedule(inp: SchedulerInput) -> PhaseSchedule:
    """Exhaustively enumerate interleavings; test oracle for schedule().

    Valid only when max-green splitting never engages (pass max_green=inf).
    Instances are capped at 10 clusters.  This function does its own forward
    simulation of each candidate order and shares no code with the DP.
    """
    _validate_input(inp)
    sequences = inp.sequences
    total = sum(len(s) for s in sequences)
    if total > 10:
        raise SchedulingError(f"oracle instance too large ({total} clusters > 10)")
    P = len(sequences)
    weights = inp.weights

    best: Optional[Tuple[float, float, Tuple[int, ...]]] = None
    best_entries: List[ScheduleEntry] = []

    order: List[int] = []

    def simulate(order_seq: List[int]) -> Tuple[float, float, List[ScheduleEntry]]:
        free = inp.now
        run_start = inp.now - inp.elapsed_green
        last = inp.current_phase
        taken = [0] * P
        cost = 0.0
        entries: List[ScheduleEntry] = []
        for p in order_seq:
            c = sequences[p][taken[p]]
            if p == last:
                ast = max(free, c.arr)
                rs = run_start  # green held through any gap; run persists
            else:
                ast = max(max(free, run_start + inp.min_green)
                          + inp.changeover_time, c.arr)
                rs = ast
            finish = ast + (c.dep - c.arr)
            cost += c.count * (ast - c.arr) * weights[p]
            entries.append(ScheduleEntry(phase=p, cluster=c, ast=ast,
                                         finish=finish, run_start=rs,
                                         seq_index=taken[p]))
            free = finish
            run_start = rs
            last = p
            taken[p] += 1
        return cost, free, entries

    def recurse() -> None:
        nonlocal best, best_entries
        if len(order) == total:
            cost, completion, entries = simulate(order)
            rank = (cost, completion, tuple(order))
            if best is None or rank < best:
                best = rank
                best_entries = entries
            return
        taken = [0] * P
        for p in order:
            taken[p] += 1
        for p in range(P):
            if taken[p] < len(sequences[p]):
                order.append(p)
                recurse()
                order.pop()

    recurse()
    if total == 0:
        return PhaseSchedule(entries=[], total_weighted_delay=0.0,
                             completion=inp.now)
    assert best is not None
    return PhaseSchedule(entries=best_entries,
                         total_weighted_delay=cumulative_weighted_delay(
                             best_entries, weights),
                         completion=best[1])


def schedule_to_csv_rows(sched: PhaseSchedule) -> List[Tuple]:
    """Debug serialization: one row per entry."""
    return [(e.phase, e.cluster.count, e.cluster.arr, e.cluster.dep,
             e.ast, e.finish) for e in sched.entries]
