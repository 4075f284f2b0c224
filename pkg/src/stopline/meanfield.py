"""Phase weighting from queue pressure.

Each intersection carries a per-phase marginal vector mu (nonnegative,
summing to 1) that doubles as the scheduler's phase weights.  The marginal
comes from effective queues: the local per-phase queue adjusted by each
neighbor's expected contribution, (inbound - outbound) scaled by the
neighbor's own marginal for the phase that serves the shared link.  Inbound
queue mass is proportioned by the sender (its turning estimate says how much
of each approach heads this way); outbound mass is proportioned by the
receiver's phase-to-exit-link estimate.

Two-phase intersections map the effective-queue difference through a
sigmoid; larger pairings use a softmax over scaled effective queues.  The
two agree: with two phases the softmax's first component is the sigmoid of
the difference (the implementation computes beta * q_hat per component
before differencing, which makes the agreement bit-exact for component 0).

``solve_fixed_point`` iterates the update synchronously over a whole network
until the marginals stop moving; the live controller instead performs one
damped update per replan cycle using last-received neighbor values.
``stability_bound`` is the closed-form cap n^2 / (2 epsilon) on the
time-averaged total queue that admissible demand must respect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .clustering import LinkSnapshot, TurnEstimate, estimate_queue
from .network import ValidatedNetwork


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def interaction_strength(q_ts: float, q_st: float, edge_class: str) -> float:
    """Signed queue-pressure coupling along one link class.

    Horizontal links push the (inbound - outbound) difference as-is; vertical
    links enter the horizontal/vertical balance with the opposite sign.
    """
    if edge_class == "h":
        return q_ts - q_st
    if edge_class == "v":
        return q_st - q_ts
    raise ValueError(f"unknown edge_class {edge_class!r}")


@dataclass(frozen=True)
class NeighborView:
    """One neighbor's contribution terms, as seen by the receiving node.

    q_in is the sender-proportioned queue mass headed here.  q_out is the
    backpressure term: the neighbor's queue already waiting on the link from
    here to there, scaled by the share of this phase's outflow that heads
    there.  It can be given ready-made, or as raw_out_queue plus the exit
    link id, in which case effective_queues needs a turning estimate to
    apply the eta share.  mu is the neighbor's marginal for the phase
    serving the shared link.
    """

    neighbor_id: str
    phase: int
    q_in: float
    q_out: float = 0.0
    mu: float = 0.5
    out_link: Optional[str] = None
    raw_out_queue: Optional[float] = None


@dataclass
class DirectionalQueues:
    q_local: List[float]
    neighbors: List[NeighborView] = field(default_factory=list)


@dataclass
class MeanFieldState:
    """Per-intersection record of one weighting step (for traces)."""

    mu: np.ndarray
    q_hat: np.ndarray
    beta: float

    def validate(self) -> None:
        if np.any(self.mu < 0.0) or abs(float(self.mu.sum()) - 1.0) > 1e-9:
            raise ValueError("mu must be a distribution over phases")


def effective_queues(d: DirectionalQueues,
                     turns: Optional[TurnEstimate] = None) -> List[float]:
    """Per-phase queues adjusted by neighbor pressure.

    q_hat[p] = q_local[p] + sum over neighbors coupled to p of
    (q_in - q_out) * mu.  A downstream queue larger than the inbound mass
    cancels pressure and can push q_hat below zero, which is intended: it
    tells the scheduler that serving the phase now buys nothing.
    """
    q_hat = [float(q) for q in d.q_local]
    for nb in d.neighbors:
        q_out = nb.q_out
        if (turns is not None and nb.out_link is not None
                and nb.raw_out_queue is not None):
            q_out = turns.eta_share(nb.phase, nb.out_link) * nb.raw_out_queue
        q_hat[nb.phase] += (nb.q_in - q_out) * nb.mu
    return q_hat


def mf_update(q_hat_h: float, q_hat_v: float, beta: float,
              mu_prev: float = 0.5, damping: float = 0.0) -> float:
    """Damped two-phase marginal update.

    beta scales each effective queue before differencing so the result is
    bit-identical to the softmax path's first component.
    """
    u = beta * q_hat_h
    v = beta * q_hat_v
    raw = sigmoid(u - v)
    mu = (1.0 - damping) * raw + damping * mu_prev
    return min(1.0, max(0.0, mu))


def phase_weights_multi(q_hat: Sequence[float], beta: float) -> np.ndarray:
    """Softmax of beta-scaled effective queues (max-subtracted)."""
    q = np.asarray(q_hat, dtype=float)
    if q.size < 2:
        raise ValueError("need at least 2 phases")
    u = beta * q
    e = np.exp(u - u.max())
    return e / e.sum()


def scheduler_weights(mu: Sequence[float], floor: float = 1e-3) -> np.ndarray:
    """Marginals floored away from zero for use as delay weights."""
    return np.maximum(np.asarray(mu, dtype=float), floor)


def stability_bound(n: int, epsilon: float) -> float:
    """Cap on time-averaged total queue length under admissible demand."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    return n * n / (2.0 * epsilon)


@dataclass
class FixedPointResult:
    mu: Dict[str, np.ndarray]
    iterations: int
    converged: bool
    residual: float


def _assemble_views(net: ValidatedNetwork,
                    snapshots: Dict[str, Sequence[LinkSnapshot]],
                    turns: Dict[str, TurnEstimate]):
    """Static per-node pieces of the update: local queues and neighbor terms.

    mu is filled per iteration; everything else is queue-snapshot data.
    Returns {node: (q_local, [(receiver phase, q_in, q_out, neighbor,
    neighbor matched phase or None), ...])}.
    """
    parts = {}
    for s in net.intersections:
        num_p = net.num_phases(s)
        q_local = [float(estimate_queue(snapshots.get(s, []), p))
                   for p in range(num_p)]
        queue_totals = {
            t: {snap.link_id: float(snap.queue_total())
                for snap in snapshots.get(t, [])}
            for t in net.neighbors(s)
        }
        terms = []
        for t in sorted(net.neighbors(s)):
            in_link, out_link = net.connecting_links(s, t)
            coupling_link = in_link if in_link is not None else out_link
            if coupling_link is None:
                continue
            phase = net.matched_phase(s, coupling_link)
            if phase is None:
                continue
            q_in = (turns[t].zeta_toward(in_link, queue_totals[t])
                    if in_link is not None else 0.0)
            # backpressure: the neighbor's queue sitting on our exit link,
            # scaled by the share of this phase's outflow that heads there
            q_out = 0.0
            if out_link is not None:
                raw = queue_totals[t].get(out_link, 0.0)
                q_out = turns[s].eta_share(phase, out_link) * raw
            t_phase = net.matched_phase(t, coupling_link)
            terms.append((phase, q_in, q_out, t, t_phase))
        parts[s] = (q_local, terms)
    return parts


def solve_fixed_point(net: ValidatedNetwork,
                      snapshots: Dict[str, Sequence[LinkSnapshot]],
                      beta: float,
                      tol: float = 1e-12,
                      max_iter: int = 1000,
                      turns: Optional[Dict[str, TurnEstimate]] = None,
                      damping: float = 0.0) -> FixedPointResult:
    """Synchronous whole-network iteration to a marginal fixed point.

    Test-harness tool: the live protocol does one update per cycle instead.
    Non-convergence is reported via the flag, never raised; the last iterate
    comes back either way.
    """
    if turns is None:
        turns = {s: TurnEstimate(net, s) for s in net.intersections}
    parts = _assemble_views(net, snapshots, turns)

    mu = {s: np.full(net.num_phases(s), 1.0 / net.num_phases(s))
          for s in net.intersections}

    def raw_step(current):
        nxt = {}
        for s, (q_local, terms) in parts.items():
            neighbors = [
                NeighborView(neighbor_id=t, phase=phase, q_in=q_in,
                             q_out=q_out,
                             mu=(float(current[t][t_phase])
                                 if t_phase is not None
                                 else 1.0 / len(current[t])))
                for (phase, q_in, q_out, t, t_phase) in terms
            ]
            q_hat = effective_queues(DirectionalQueues(q_local, neighbors))
            if len(q_hat) == 2:
                m = mf_update(q_hat[0], q_hat[1], beta)
                nxt[s] = np.array([m, 1.0 - m])
            else:
                nxt[s] = phase_weights_multi(q_hat, beta)
        return nxt

    iterations = 0
    converged = False
    for _ in range(max_iter):
        raw = raw_step(mu)
        new = {s: (1.0 - damping) * raw[s] + damping * mu[s] for s in mu}
        delta = max(float(np.max(np.abs(new[s] - mu[s]))) for s in mu)
        mu = new
        iterations += 1
        if delta < tol:
            converged = True
            break

    final_raw = raw_step(mu)
    residual = max(float(np.max(np.abs(final_raw[s] - mu[s]))) for s in mu)
    return FixedPointResult(mu=mu, iterations=iterations,
                            converged=converged, residual=residual)
