"""The headline experiment: four controllers, one congested grid.

Runs the reference 4x4 grid (dominant eastbound arterial, ramping demand,
noisy detectors) under fixed-time plates, unweighted cluster scheduling,
locally weighted scheduling, and the full neighbor-coupled composite, then
prints the comparison table. Expect the composite to win overall and to win
big in the peak-demand tier; expect fixed time to lose badly once the ramp
passes what the plates were implicitly timed for.

Full run is about two minutes; pass --quick for a single shorter seed.
"""

import argparse

import numpy as np

from stopline.harness import ExperimentConfig, run_experiment
from stopline.scenarios import reference_grid

MODES = ("fixed_time", "baseline", "local_queue", "composite")

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true",
                    help="one seed, 2400s instead of two seeds, 4200s")
args = parser.parse_args()

seeds = (1,) if args.quick else (1, 2)
duration = 2400.0 if args.quick else 4200.0

spec = reference_grid()
reports = {}
for mode in MODES:
    reports[mode] = run_experiment(ExperimentConfig(
        scenario=spec, mode=mode, seeds=seeds, duration=duration,
        warmup=300.0, jobs=len(seeds)))
    print(f"ran {mode}")

base = float(np.mean([r.mean_delay for r in reports["baseline"]]))
print(f"\n{'mode':<12} {'delay':>7} {'p50':>7} {'p90':>7} "
      f"{'vs baseline':>12}   tier delays (low/med/high)")
for mode in MODES:
    rs = reports[mode]
    mean = float(np.mean([r.mean_delay for r in rs]))
    p50 = float(np.mean([r.quantiles[50] for r in rs]))
    p90 = float(np.mean([r.quantiles[90] for r in rs]))
    tiers = [float(np.mean([r.tier_means[t] for r in rs])) for t in range(3)]
    rel = 100.0 * (base - mean) / base
    print(f"{mode:<12} {mean:6.1f}s {p50:6.1f}s {p90:6.1f}s {rel:+11.1f}%   "
          + " / ".join(f"{t:.1f}s" for t in tiers))

# where the composite spends its wins: entry junctions on the arterial
print("\nmean queue by junction, baseline -> composite:")
for node in sorted(reports["baseline"][0].per_intersection):
    bq = float(np.mean([r.per_intersection[node]["queue_mean"]
                        for r in reports["baseline"]]))
    cq = float(np.mean([r.per_intersection[node]["queue_mean"]
                        for r in reports["composite"]]))
    mark = "  <-" if bq - cq > 0.5 else ""
    print(f"  {node}: {bq:5.2f} -> {cq:5.2f}{mark}")
