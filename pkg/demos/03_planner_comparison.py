"""
Comparing planners on one scenario
==================================

The same straight channel is searched by PBACS, a lawnmower survey and the
two myopic MDP planners (UCB and MVI rewards), with three vehicles each.
The comparison mirrors the experiment matrix on a single cell; the full
matrix is run with ``channelsearch bench``.

Takes under a minute; an MDP mission that times out runs the full 8000 s budget.
"""
from __future__ import annotations

from channelsearch.harness import aggregate, benchmark_config, full_coverage_times
from channelsearch.scenario import generate_scenario
from channelsearch.simkernel import PLANNERS, run_mission

scenario = generate_scenario("straight", seed=0, rotation=15.0)
config = benchmark_config()

records = []
for planner in PLANNERS:
    rec = run_mission(scenario, planner, 3, config.with_overrides(seed=1))
    records.append(rec)
    status = "found" if rec.found else "timeout"
    print(f"{planner:>9}: {status:7} at {rec.duration_s:6.0f} s, time on final path {rec.time_on_path_ratio:.2f}")

# Aggregation excludes timed-out missions from mean durations but counts them
# in the timeout fraction.
summary = aggregate(records)
for row in summary.timeouts:
    print(f"{row['planner']:>9}: timeout fraction {row['fraction']:.2f}")

# For reference: how long a complete lawnmower survey would take.
print("full-coverage lawnmower:", full_coverage_times(scenario, (1, 3), config))
