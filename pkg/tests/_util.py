"""Shared test helpers: random scheduler instances with exact arithmetic.

Counts and times are small integers and weights are dyadic rationals (k/32),
so every cost the scheduler or the oracle can compute is an exact float64 and
"equal cost" is well defined without tolerances.
"""

import numpy as np

from stopline.scheduling import Cluster, SchedulerInput


def random_scheduler_instance(rng: np.random.Generator,
                              max_clusters: int = 10,
                              phase_choices=(2, 3)) -> SchedulerInput:
    P = int(rng.choice(phase_choices))
    total = int(rng.integers(1, max_clusters + 1))
    sequences = [[] for _ in range(P)]
    for _ in range(total):
        p = int(rng.integers(0, P))
        count = float(rng.integers(1, 6))
        arr = float(rng.integers(0, 41))
        dur = float(rng.integers(1, 13))
        sequences[p].append(Cluster(count=count, arr=arr, dep=arr + dur))
    for seq in sequences:
        seq.sort(key=lambda c: c.arr)
    weights = [float(rng.integers(1, 33)) / 32.0 for _ in range(P)]
    return SchedulerInput(
        sequences=sequences,
        weights=weights,
        changeover_time=float(rng.integers(0, 6)),
        current_phase=int(rng.integers(0, P)),
        now=0.0,
    )
