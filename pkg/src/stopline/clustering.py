"""Sensing: vehicle clusters, queue estimates, and turning proportions.

Each intersection senses its approach links as a list of ``LinkSnapshot``
records: the stop-line queues (by serving phase) plus each approaching
vehicle's predicted arrival at the stop line.  ``build_cluster_sequence``
turns one phase's sensed vehicles into the job sequence the scheduler
consumes.

A phase is treated as one service channel whose rate is the sum of the
saturation rates of the approach links it serves (parallel approaches
discharge concurrently during the same green).  Queued vehicles arrive "now";
the queue therefore forms the first cluster.  Vehicles are merged into a
cluster while the gap between consecutive predicted arrivals is at most
cluster_gap, and clusters whose service interval would swallow the next
arrival are merged as well, so the sequence is disjoint in [arr, dep) and
sorted by arrival.  dep = arr + count / service_rate throughout.

``TurnEstimate`` tracks two proportion families per movement from observed
discharge events with an exponential moving average: zeta (where traffic
entering on an in-link goes, normalized per in-link) and eta (where a phase's
outflow goes, normalized per phase).  Windows with no events leave the
estimate unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .network import Movement, ValidatedNetwork
from .scheduling import Cluster


@dataclass
class LinkSnapshot:
    """What one approach link's detector reports at a replan instant."""

    link_id: str
    saturation_rate: float
    queued: Dict[int, int] = field(default_factory=dict)  # phase -> count
    approaching: List[Tuple[float, int]] = field(default_factory=list)  # (eta, phase)

    def queue_total(self) -> int:
        return sum(self.queued.values())


@dataclass
class ClusterSequence:
    phase: int
    clusters: List[Cluster]

    def total_count(self) -> float:
        return sum(c.count for c in self.clusters)


def build_cluster_sequence(snapshots: Sequence[LinkSnapshot], phase: int,
                           now: float, horizon: float, cluster_gap: float
                           ) -> ClusterSequence:
    """Cluster one phase's sensed vehicles into scheduler jobs.

    Only vehicles predicted to reach the stop line strictly within the
    horizon are included, so the sequence's total count equals the number of
    sensed in-horizon vehicles.
    """
    arrivals: List[float] = []
    rate = 0.0
    for snap in snapshots:
        contributes = False
        q = snap.queued.get(phase, 0)
        if q > 0:
            arrivals.extend([now] * q)
            contributes = True
        for eta, p in snap.approaching:
            if p == phase and eta < horizon:
                arrivals.append(now + eta)
                contributes = True
        if contributes:
            rate += snap.saturation_rate
    if not arrivals:
        return ClusterSequence(phase=phase, clusters=[])
    if rate <= 0.0:
        raise ValueError(f"phase {phase}: no positive service rate in snapshots")

    arrivals.sort()
    groups: List[List[float]] = [[arrivals[0]]]
    for a in arrivals[1:]:
        if a - groups[-1][-1] <= cluster_gap:
            groups[-1].append(a)
        else:
            groups.append([a])

    clusters: List[Cluster] = []
    for g in groups:
        c = Cluster(count=float(len(g)), arr=g[0], dep=g[0] + len(g) / rate)
        while clusters and c.arr < clusters[-1].dep:
            prev = clusters.pop()
            total = prev.count + c.count
            c = Cluster(count=total, arr=prev.arr, dep=prev.arr + total / rate)
        clusters.append(c)
    return ClusterSequence(phase=phase, clusters=clusters)


def estimate_queue(snapshots: Sequence[LinkSnapshot], phase: int,
                   noise_std: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> int:
    """Stop-line queue count summed over the phase's movements.

    With noise_std > 0 a zero-mean integer perturbation is added (never
    driving the estimate negative).
    """
    q = sum(snap.queued.get(phase, 0) for snap in snapshots)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise requested but no rng given")
        q = max(0, q + int(round(rng.normal(0.0, noise_std))))
    return q


def perturb_snapshots(snapshots: Sequence[LinkSnapshot], noise_std: float,
                      rng: np.random.Generator,
                      noise_rel: float = 0.0) -> List[LinkSnapshot]:
    """Corrupt detector counts the way a real sensor would.

    Every per-link per-phase queue reading gets an independent zero-mean
    integer error, clipped at zero, with standard deviation
    noise_std + noise_rel * count: a floor that hits empty approaches too
    (stuck loops and occlusion shadows produce false calls regardless of
    occupancy) plus a component proportional to what is being counted
    (occupancy-to-count conversion degrades as queues stack up). The draw
    order is fixed (snapshot order, then sorted phase ids) so replays with
    the same generator state are exact. Arrival predictions are left
    alone; count errors dominate loop and camera detectors in practice.
    """
    if noise_std <= 0.0 and noise_rel <= 0.0:
        return list(snapshots)
    out: List[LinkSnapshot] = []
    for snap in snapshots:
        noisy = {}
        for p in sorted(snap.queued):
            n = snap.queued[p]
            sd = noise_std + noise_rel * n
            noisy[p] = max(0, n + int(round(rng.normal(0.0, 1.0) * sd)))
        out.append(LinkSnapshot(link_id=snap.link_id,
                                saturation_rate=snap.saturation_rate,
                                queued=noisy,
                                approaching=list(snap.approaching)))
    return out


class TurnEstimate:
    """EMA estimates of turning proportions at one intersection."""

    def __init__(self, net: ValidatedNetwork, inter_id: str):
        self.inter_id = inter_id
        inter = net.intersections[inter_id]
        self.phase_of_movement = net.phase_of_movement[inter_id]
        self.zeta: Dict[Movement, float] = {}
        self.eta: Dict[Movement, float] = {}
        by_in: Dict[str, List[Movement]] = {}
        by_phase: Dict[int, List[Movement]] = {}
        for mv, ph in self.phase_of_movement.items():
            by_in.setdefault(mv[0], []).append(mv)
            by_phase.setdefault(ph, []).append(mv)
        for movements in by_in.values():
            for mv in movements:
                self.zeta[mv] = 1.0 / len(movements)
        for movements in by_phase.values():
            for mv in movements:
                self.eta[mv] = 1.0 / len(movements)
        self._by_in = by_in
        self._by_phase = by_phase

    # -- queries ----------------------------------------------------------

    def zeta_share(self, in_link: str, out_link: str) -> float:
        return self.zeta.get((in_link, out_link), 0.0)

    def zeta_toward(self, out_link: str, queue_by_in: Dict[str, float]) -> float:
        """Sender-side proportioning: expected queue mass heading to out_link."""
        total = 0.0
        for in_link, q in queue_by_in.items():
            for mv in self._by_in.get(in_link, []):
                if mv[1] == out_link:
                    total += q * self.zeta[mv]
        return total

    def phase_share_of_inlink(self, in_link: str, phase: int) -> float:
        """Fraction of an in-link's traffic served by `phase` (by zeta)."""
        total = 0.0
        for mv in self._by_in.get(in_link, []):
            if self.phase_of_movement[mv] == phase:
                total += self.zeta[mv]
        return total

    def eta_share(self, phase: int, out_link: str) -> float:
        """Fraction of a phase's outflow heading to out_link."""
        total = 0.0
        for mv in self._by_phase.get(phase, []):
            if mv[1] == out_link:
                total += self.eta[mv]
        return total


def update_turning_proportions(est: TurnEstimate,
                               events: Iterable[Movement],
                               alpha: float) -> None:
    """One EMA window update from observed discharge events.

    Both families move toward the window's empirical shares; in-links or
    phases with no events in the window keep their current estimates.
    """
    counts: Dict[Movement, int] = {}
    for mv in events:
        if mv not in est.zeta:
            raise ValueError(f"event for unknown movement {mv}")
        counts[mv] = counts.get(mv, 0) + 1
    if not counts:
        return

    for in_link, movements in est._by_in.items():
        total = sum(counts.get(mv, 0) for mv in movements)
        if total == 0:
            continue
        for mv in movements:
            obs = counts.get(mv, 0) / total
            est.zeta[mv] += alpha * (obs - est.zeta[mv])
        norm = sum(est.zeta[mv] for mv in movements)
        for mv in movements:
            est.zeta[mv] /= norm

    for phase, movements in est._by_phase.items():
        total = sum(counts.get(mv, 0) for mv in movements)
        if total == 0:
            continue
        for mv in movements:
            obs = counts.get(mv, 0) / total
            est.eta[mv] += alpha * (obs - est.eta[mv])
        norm = sum(est.eta[mv] for mv in movements)
        for mv in movements:
            est.eta[mv] /= norm


def cluster_sequences_to_csv_rows(sequences: Sequence[ClusterSequence]
                                  ) -> List[Tuple]:
    """Debug serialization: (phase, index, count, arr, dep) per cluster."""
    rows = []
    for seq in sequences:
        for i, c in enumerate(seq.clusters):
            rows.append((seq.phase, i, c.count, c.arr, c.dep))
    return rows
