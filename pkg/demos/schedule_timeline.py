"""What the cluster scheduler actually decides.

A morning-rush moment at one intersection: two arterial platoons are bearing
down on the stopline while a handful of cross-street cars trickle in. The
scheduler sequences whole platoons, not per-cycle splits, so the interesting
output is the order and the gaps. Run it twice in your head: with uniform
weights the big platoons dominate; hand the cross street a heavier weight and
watch the order flip, paying changeover time to do it.
"""

from stopline.scheduling import (
    Cluster,
    SchedulerInput,
    brute_force_schedule,
    schedule,
)

ARTERIAL = [Cluster(count=8, arr=0.0, dep=16.0),
            Cluster(count=5, arr=30.0, dep=40.0)]
CROSS = [Cluster(count=2, arr=5.0, dep=9.0),
         Cluster(count=3, arr=20.0, dep=26.0)]
NAMES = {0: "arterial", 1: "cross"}


def show(tag, weights):
    inp = SchedulerInput(sequences=[ARTERIAL, CROSS], weights=weights,
                         changeover_time=4.0, current_phase=0)
    plan = schedule(inp)
    check = brute_force_schedule(inp)
    assert plan.total_weighted_delay == check.total_weighted_delay

    print(f"\n{tag}  (weights arterial={weights[0]}, cross={weights[1]})")
    for e in plan.entries:
        wait = e.ast - e.cluster.arr
        print(f"  t={e.ast:5.1f}s  {NAMES[e.phase]:<8} "
              f"{e.cluster.count:.0f} vehicles, waited {wait:4.1f}s")
    print(f"  weighted delay {plan.total_weighted_delay:.1f}, "
          f"all served by t={plan.completion:.1f}s "
          f"(exhaustive search agrees)")
    for phase, start, end in plan.green_runs():
        print(f"    green {NAMES[phase]:<8} {start:5.1f} -> {end:5.1f}s")


if __name__ == "__main__":
    show("uniform weights", [1.0, 1.0])
    show("cross street prioritized", [0.25, 0.75])
    # a max_green cap forces the 16s platoon to be split and resumed
    capped = SchedulerInput(sequences=[ARTERIAL, CROSS], weights=[1.0, 1.0],
                            changeover_time=4.0, current_phase=0,
                            max_green=12.0)
    plan = schedule(capped)
    print(f"\nmax_green=12s splits the lead platoon into "
          f"{len(plan.entries)} service pieces ({plan.splits} splits), "
          f"weighted delay {plan.total_weighted_delay:.1f}")
