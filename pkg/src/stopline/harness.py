"""Experiment harness: closed-loop runs, reports, comparisons, and files.

One run couples the traffic simulator with one controller agent per
intersection and a message transport, steps them for a configured duration,
and condenses the outcome into a RunReport.  Reports are written as four raw
CSV files plus a summary JSON whose statistics are exactly recomputable from
the CSVs, and identical (scenario, mode, seed) runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .meanfield import stability_bound
from .network import NetworkSpec, ValidatedNetwork, validate_network
from .protocol import (
    MODES,
    QueueMessage,
    SignalView,
    Transport,
    due,
    ingest,
    make_agent,
    messages_to_csv_rows,
    observe_turn_events,
    replan_cycle,
)
from .simulation import Simulation

PERCENTILES = tuple(i / 100.0 for i in range(101))

RUN_FILES = ("vehicles.csv", "queues.csv", "weights.csv", "messages.csv",
             "summary.json")


@dataclass
class ExperimentConfig:
    """One experiment: a scenario driven by one controller mode over seeds."""

    scenario: Union[str, dict, NetworkSpec]
    mode: str
    seeds: Sequence[int]
    duration: float
    warmup: float = 300.0
    out_dir: Optional[str] = None
    force_uniform: bool = False
    label: str = ""
    jobs: int = 1

    def validated(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")
        if not (self.duration > self.warmup >= 0.0):
            raise ValueError("need duration > warmup >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self


@dataclass
class RunReport:
    """Everything measured in one (scenario, mode, seed) run."""

    scenario: str
    mode: str
    seed: int
    duration: float
    warmup: float
    dt: float
    n_vehicles: int
    mean_delay: float
    std_delay: float
    quantiles: List[float]
    tiers: List[Tuple[float, float]]
    tier_counts: List[int]
    tier_means: List[float]
    per_intersection: Dict[str, Dict[str, float]]
    stability_trace: List[Tuple[float, int, int]]
    bound: Optional[float]
    message_stats: Dict[str, int]
    controls: List[Tuple[float, str, int]]
    delays: List[Tuple[int, float, float, float]] = field(repr=False,
                                                          default_factory=list)
    queues_rows: List[tuple] = field(repr=False, default_factory=list)
    weights_rows: List[tuple] = field(repr=False, default_factory=list)
    messages_rows: List[tuple] = field(repr=False, default_factory=list)

    def summary_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "duration": self.duration,
            "warmup": self.warmup,
            "dt": self.dt,
            "n_vehicles": self.n_vehicles,
            "mean_delay": self.mean_delay,
            "std_delay": self.std_delay,
            "quantiles": self.quantiles,
            "tiers": [list(t) for t in self.tiers],
            "tier_counts": self.tier_counts,
            "tier_means": self.tier_means,
            "per_intersection": self.per_intersection,
            "stability": {
                "bound": self.bound,
                "trace": [list(t) for t in self.stability_trace],
            },
            "messages": self.message_stats,
            "controls": [[c, i, p] for (c, i, p) in self.controls],
        }


def _sample_stats(values: Sequence[float]) -> Tuple[float, float]:
    """(mean, sample std); degenerate inputs give zeros, never NaN."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _demand_tiers(spec: NetworkSpec, duration: float
                  ) -> List[Tuple[float, float]]:
    """The demand's shared interval partition, or one tier covering the run."""
    partitions = {
        tuple((float(t0), float(t1)) for (t0, t1, _r) in prof.schedule)
        for prof in spec.demand
    }
    if len(partitions) == 1:
        tiers = list(partitions.pop())
        if tiers:
            return tiers
    return [(0.0, float(duration))]


def _scenario_spec(cfg: ExperimentConfig) -> Tuple[NetworkSpec, str]:
    sc = cfg.scenario
    if isinstance(sc, str):
        spec = NetworkSpec.from_json(sc)
        name = cfg.label or os.path.splitext(os.path.basename(sc))[0]
    elif isinstance(sc, dict):
        spec = NetworkSpec.from_dict(sc)
        name = cfg.label or "scenario"
    else:
        spec = sc
        name = cfg.label or "scenario"
    return spec, name


def _fmt(x: float) -> str:
    return repr(float(x))


def _join(values) -> str:
    return ";".join(_fmt(v) for v in values)


def run_single(net: ValidatedNetwork, spec: NetworkSpec, mode: str,
               seed: int, duration: float, warmup: float,
               force_uniform: bool = False,
               scenario_name: str = "scenario") -> RunReport:
    """Drive one closed-loop run and collect its report."""
    params = net.params
    dt = params.dt
    n_steps = int(round(duration / dt))
    inter_ids = sorted(net.intersections)

    sim = Simulation(net, seed=seed)
    transport = Transport(dt, params.message_delay_steps,
                          params.message_loss_prob,
                          rng=np.random.default_rng(
                              np.random.SeedSequence([seed, 1])))
    offset_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    slots = max(1, int(round(params.replan_period / dt)))
    agent_seeds = np.random.SeedSequence([seed, 3]).spawn(len(inter_ids))
    agents = {}
    for i, inter_id in enumerate(inter_ids):
        offset = float(offset_rng.integers(0, slots)) * dt
        agents[inter_id] = make_agent(
            net, inter_id, params, mode, first_replan=offset,
            rng=np.random.default_rng(agent_seeds[i]))

    controls_trace: List[Tuple[float, str, int]] = []
    queues_rows: List[tuple] = []
    weights_rows: List[tuple] = []
    sent_messages: List[QueueMessage] = []
    stability: List[Tuple[float, int, int]] = []
    queue_series: Dict[str, List[int]] = {i: [] for i in inter_ids}
    cluster_counts: Dict[str, List[float]] = {i: [] for i in inter_ids}
    cluster_durs: Dict[str, List[float]] = {i: [] for i in inter_ids}

    for _ in range(n_steps):
        clock = sim.clock
        batches: Dict[str, List[QueueMessage]] = {}
        for msg in transport.deliver_due(clock):
            batches.setdefault(msg.receiver, []).append(msg)
        for inter_id in sorted(batches):
            ingest(agents[inter_id], batches[inter_id])

        controls: Dict[str, int] = {}
        for inter_id in inter_ids:
            agent = agents[inter_id]
            if mode != "fixed_time" and not due(agent, clock):
                continue
            sig = sim.signals[inter_id]
            view = SignalView(phase=sig.active,
                              elapsed_green=sig.elapsed_green,
                              in_changeover=sig.in_changeover,
                              pending=sig.pending)
            snaps = sim.sense(inter_id)
            agent, decision, outbox = replan_cycle(
                agent, net, snaps, view, clock, force_uniform=force_uniform)
            controls[inter_id] = decision
            transport.send(outbox, clock)
            sent_messages.extend(outbox)
            controls_trace.append((clock, inter_id, decision))
            if mode != "fixed_time":
                seqs = agent.last_sequences or []
                counts = [c.count for s in seqs for c in s.clusters]
                durs = [c.dep - c.arr for s in seqs for c in s.clusters]
                if clock + 1e-9 >= warmup:
                    cluster_counts[inter_id].extend(counts)
                    cluster_durs[inter_id].extend(durs)
                weights_rows.append((
                    _fmt(clock), inter_id, str(decision),
                    _join(agent.mf.mu), _join(agent.last_weights),
                    _join(agent.mf.q_hat), _join(counts), _join(durs)))

        sim.step(controls)
        now = sim.clock
        if mode != "fixed_time":
            for inter_id in inter_ids:
                events = sim.drain_discharge_events(inter_id)
                if events:
                    observe_turn_events(agents[inter_id], events)

        total = 0
        for inter_id in inter_ids:
            by_phase = sim.queue_by_phase(inter_id)
            q = int(sum(by_phase))
            total += q
            queues_rows.append((_fmt(now), inter_id, str(q),
                                ";".join(str(v) for v in by_phase)))
            if now + 1e-9 >= warmup:
                queue_series[inter_id].append(q)
        stability.append((now, total, sim.buffered()))

    delays = sorted(
        (rec.vehicle_id, rec.entry_time, rec.exit_time, rec.delay)
        for rec in sim.delay_log if rec.entry_time + 1e-9 >= warmup)
    delay_vals = [d for (_v, _en, _ex, d) in delays]
    mean_delay, std_delay = _sample_stats(delay_vals)
    if delay_vals:
        quantiles = [float(q) for q in
                     np.quantile(np.asarray(delay_vals), PERCENTILES)]
    else:
        quantiles = [0.0] * len(PERCENTILES)

    tiers = _demand_tiers(spec, duration)
    tier_counts, tier_means = [], []
    for (t0, t1) in tiers:
        vals = [d for (_v, en, _ex, d) in delays if t0 <= en < t1]
        tier_counts.append(len(vals))
        tier_means.append(_sample_stats(vals)[0])

    per_inter: Dict[str, Dict[str, float]] = {}
    for inter_id in inter_ids:
        q_mean, q_std = _sample_stats(queue_series[inter_id])
        c_mean, c_std = _sample_stats(cluster_counts[inter_id])
        d_mean, d_std = _sample_stats(cluster_durs[inter_id])
        per_inter[inter_id] = {
            "queue_mean": q_mean, "queue_std": q_std,
            "cluster_count_mean": c_mean, "cluster_count_std": c_std,
            "cluster_duration_mean": d_mean, "cluster_duration_std": d_std,
        }

    bound = None
    if params.stability_epsilon is not None:
        bound = stability_bound(len(inter_ids), params.stability_epsilon)

    message_stats = {
        "sent": transport.sent,
        "delivered": transport.delivered,
        "dropped": transport.dropped,
        "in_flight": transport.in_flight(),
        "rejected": sum(a.rejected for a in agents.values()),
    }

    return RunReport(
        scenario=scenario_name, mode=mode, seed=seed, duration=duration,
        warmup=warmup, dt=dt, n_vehicles=len(delays),
        mean_delay=mean_delay, std_delay=std_delay, quantiles=quantiles,
        tiers=tiers, tier_counts=tier_counts, tier_means=tier_means,
        per_intersection=per_inter, stability_trace=stability, bound=bound,
        message_stats=message_stats, controls=controls_trace, delays=delays,
        queues_rows=queues_rows, weights_rows=weights_rows,
        messages_rows=messages_to_csv_rows(sent_messages)[1:])


def _seed_job(spec: NetworkSpec, mode: str, seed: int, duration: float,
              warmup: float, force_uniform: bool, name: str) -> RunReport:
    # rebuilt per worker so process pools never have to ship derived state
    net = validate_network(spec)
    return run_single(net, spec, mode, seed, duration, warmup,
                      force_uniform=force_uniform, scenario_name=name)


def run_experiment(cfg: ExperimentConfig) -> List[RunReport]:
    """One RunReport per seed; writes run directories when out_dir is set.

    Seeds are independent, so jobs > 1 fans them out over worker processes;
    the report order and every emitted byte stay identical either way.
    """
    cfg = cfg.validated()
    spec, name = _scenario_spec(cfg)
    seeds = [int(s) for s in cfg.seeds]
    if cfg.jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(cfg.jobs,
                                                 len(seeds))) as pool:
            futures = [pool.submit(_seed_job, spec, cfg.mode, seed,
                                   cfg.duration, cfg.warmup,
                                   cfg.force_uniform, name)
                       for seed in seeds]
            reports = [f.result() for f in futures]
    else:
        net = validate_network(spec)
        reports = [run_single(net, spec, cfg.mode, seed, cfg.duration,
                              cfg.warmup, force_uniform=cfg.force_uniform,
                              scenario_name=name)
                   for seed in seeds]
    if cfg.out_dir is not None:
        for report in reports:
            write_report(report,
                         os.path.join(cfg.out_dir, f"seed_{report.seed}"))
    return reports


def _tier_index(tiers: Sequence[Tuple[float, float]], entry: float) -> int:
    for k, (t0, t1) in enumerate(tiers):
        if t0 <= entry < t1:
            return k
    return len(tiers) - 1


def write_report(report: RunReport, run_dir: str) -> None:
    os.makedirs(run_dir, exist_ok=True)

    def write_csv(name: str, header: Sequence[str],
                  rows: Sequence[tuple]) -> None:
        with open(os.path.join(run_dir, name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    write_csv("vehicles.csv",
              ("vehicle_id", "entry", "exit", "delay", "tier"),
              [(str(v), _fmt(en), _fmt(ex), _fmt(d),
                str(_tier_index(report.tiers, en)))
               for (v, en, ex, d) in report.delays])
    write_csv("queues.csv", ("time", "intersection", "total", "by_phase"),
              report.queues_rows)
    write_csv("weights.csv",
              ("time", "intersection", "decision", "mu", "weights", "q_hat",
               "cluster_counts", "cluster_durations"),
              report.weights_rows)
    write_csv("messages.csv",
              ("time", "sender", "receiver", "kind", "payload_total", "mu"),
              report.messages_rows)
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(report.summary_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_run_dir(run_dir: str) -> RunReport:
    """Rebuild a comparable RunReport from a written run directory."""
    with open(os.path.join(run_dir, "summary.json")) as fh:
        s = json.load(fh)
    delays: List[Tuple[int, float, float, float]] = []
    with open(os.path.join(run_dir, "vehicles.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            delays.append((int(row["vehicle_id"]), float(row["entry"]),
                           float(row["exit"]), float(row["delay"])))
    return RunReport(
        scenario=s["scenario"], mode=s["mode"], seed=s["seed"],
        duration=s["duration"], warmup=s["warmup"], dt=s["dt"],
        n_vehicles=s["n_vehicles"], mean_delay=s["mean_delay"],
        std_delay=s["std_delay"], quantiles=s["quantiles"],
        tiers=[tuple(t) for t in s["tiers"]],
        tier_counts=s["tier_counts"], tier_means=s["tier_means"],
        per_intersection=s["per_intersection"],
        stability_trace=[tuple(t) for t in s["stability"]["trace"]],
        bound=s["stability"]["bound"], message_stats=s["messages"],
        controls=[(c, i, p) for (c, i, p) in s["controls"]],
        delays=delays)


def load_experiment_dir(out_dir: str) -> List[RunReport]:
    runs = sorted(d for d in os.listdir(out_dir)
                  if d.startswith("seed_")
                  and os.path.isdir(os.path.join(out_dir, d)))
    if not runs:
        raise FileNotFoundError(f"no seed_* run directories in {out_dir}")
    return [load_run_dir(os.path.join(out_dir, d)) for d in runs]


@dataclass
class ComparisonSummary:
    """Paired comparison of two report lists (a = reference, b = candidate)."""

    scenario: str
    mode_a: str
    mode_b: str
    seeds: List[int]
    mean_a: float
    mean_b: float
    improvement_pct: float
    per_seed: List[Dict[str, float]]
    p90_a: float
    p90_b: float
    p90_improvement_pct: float
    cdf_percentiles: List[float]
    cdf_a: List[float]
    cdf_b: List[float]
    queue_mean_delta: Dict[str, float]
    cluster_count_std_delta: Dict[str, float]
    tier_improvement_pct: List[float]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode_a": self.mode_a,
            "mode_b": self.mode_b,
            "seeds": self.seeds,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "improvement_pct": self.improvement_pct,
            "per_seed": self.per_seed,
            "p90_a": self.p90_a,
            "p90_b": self.p90_b,
            "p90_improvement_pct": self.p90_improvement_pct,
            "queue_mean_delta": self.queue_mean_delta,
            "cluster_count_std_delta": self.cluster_count_std_delta,
            "tier_improvement_pct": self.tier_improvement_pct,
        }


def _pct_gain(a: float, b: float) -> float:
    return 100.0 * (a - b) / a if a > 0.0 else 0.0


def compare_reports(a: Sequence[RunReport],
                    b: Sequence[RunReport]) -> ComparisonSummary:
    """Paired per-seed deltas and relative improvement of b over a."""
    if not a or not b:
        raise ValueError("empty report list")
    seeds_a = sorted(r.seed for r in a)
    seeds_b = sorted(r.seed for r in b)
    if seeds_a != seeds_b:
        raise ValueError(f"mismatched seed sets {seeds_a} vs {seeds_b}")
    if len(set(seeds_a)) != len(seeds_a):
        raise ValueError("duplicate seeds in report list")
    if {r.scenario for r in a} != {r.scenario for r in b}:
        raise ValueError("reports come from different scenarios")

    by_a = {r.seed: r for r in a}
    by_b = {r.seed: r for r in b}
    per_seed = []
    for seed in seeds_a:
        ra, rb = by_a[seed], by_b[seed]
        per_seed.append({
            "seed": seed,
            "mean_a": ra.mean_delay,
            "mean_b": rb.mean_delay,
            "delta": ra.mean_delay - rb.mean_delay,
            "improvement_pct": _pct_gain(ra.mean_delay, rb.mean_delay),
        })

    mean_a = float(np.mean([r.mean_delay for r in a]))
    mean_b = float(np.mean([r.mean_delay for r in b]))
    grid = list(PERCENTILES)
    cdf_a = [float(np.mean([r.quantiles[k] for r in a]))
             for k in range(len(grid))]
    cdf_b = [float(np.mean([r.quantiles[k] for r in b]))
             for k in range(len(grid))]
    p90_a, p90_b = cdf_a[90], cdf_b[90]

    inter_ids = sorted(by_a[seeds_a[0]].per_intersection)
    queue_delta = {}
    cstd_delta = {}
    for i in inter_ids:
        qa = float(np.mean([r.per_intersection[i]["queue_mean"] for r in a]))
        qb = float(np.mean([r.per_intersection[i]["queue_mean"] for r in b]))
        queue_delta[i] = qa - qb
        sa = float(np.mean([r.per_intersection[i]["cluster_count_std"]
                            for r in a]))
        sb = float(np.mean([r.per_intersection[i]["cluster_count_std"]
                            for r in b]))
        cstd_delta[i] = sa - sb

    n_tiers = len(by_a[seeds_a[0]].tiers)
    tier_gain = []
    for k in range(n_tiers):
        ta = float(np.mean([r.tier_means[k] for r in a]))
        tb = float(np.mean([r.tier_means[k] for r in b]))
        tier_gain.append(_pct_gain(ta, tb))

    return ComparisonSummary(
        scenario=a[0].scenario, mode_a=a[0].mode, mode_b=b[0].mode,
        seeds=seeds_a, mean_a=mean_a, mean_b=mean_b,
        improvement_pct=_pct_gain(mean_a, mean_b), per_seed=per_seed,
        p90_a=p90_a, p90_b=p90_b,
        p90_improvement_pct=_pct_gain(p90_a, p90_b),
        cdf_percentiles=grid, cdf_a=cdf_a, cdf_b=cdf_b,
        queue_mean_delta=queue_delta, cluster_count_std_delta=cstd_delta,
        tier_improvement_pct=tier_gain)


def emit_demand_tier_breakdown(report: RunReport) -> List[Dict[str, float]]:
    """Per-tier vehicle counts and mean delays, partitioning the run."""
    rows = []
    for k, (t0, t1) in enumerate(report.tiers):
        rows.append({"tier": k, "t0": t0, "t1": t1,
                     "count": report.tier_counts[k],
                     "mean_delay": report.tier_means[k]})
    return rows
