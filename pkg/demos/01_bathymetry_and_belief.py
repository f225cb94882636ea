"""
From ground truth to a vehicle's belief
=======================================

A survey vehicle never sees the whole depth map.  It samples the depth below
its hull, and a Gaussian process turns those samples into a mean depth and
an uncertainty for every grid cell.  This script walks through that pipeline
on one generated scenario and prints the maps as text.
"""
from __future__ import annotations

import numpy as np

from channelsearch import FastGprConfig, KernelConfig, PbacsConfig, build_search_grid, fit_predict
from channelsearch.scenario import cell_center, generate_scenario
from channelsearch.simkernel import VehicleState, sample_depth


def show(title, grid, fmt):
    print(f"\n{title}")
    for row in grid:
        print("  " + "".join(fmt(v) for v in row))


# A 25 x 38 field of 20 m cells with a channel bending across it.  Row 0 is the
# start edge, the last row is the goal edge.  Depths are in feet.
scenario = generate_scenario("single-bend", seed=2)
deep = scenario.depth_grid >= 20.0
show("ground truth ('#' = at least 20 ft deep)", deep, lambda v: "#" if v else ".")

# One vehicle drives straight down column 5 and then across row 19, sampling
# at 10 Hz.  Samples are averaged per cell visit, as the simulator does.
rng = np.random.default_rng(0)
route = [scenario.flat((r, 5)) for r in range(scenario.rows)]
route += [scenario.flat((19, c)) for c in range(scenario.cols)]
measurements = []
for t, cell in enumerate(route):
    v = VehicleState(tuple(cell_center(scenario, cell)))
    measurements.append(sample_depth(v, scenario, rng, sigma_n=0.2, time=float(t), samples=80))
print(f"\n{len(measurements)} cell-averaged measurements")

# Fast GPR: k experts on subsets of the data, combined by precision weighting.
belief = fit_predict(measurements, scenario, FastGprConfig(), KernelConfig(form="squared-exponential"))
show("posterior mean depth (tens of feet)", belief.mean.reshape(scenario.depth_grid.shape),
     lambda v: str(int(v // 10)))
show("posterior variance ('o' = still uncertain)", belief.variance.reshape(scenario.depth_grid.shape),
     lambda v: "o" if v > 5 else "-")

# The PBACS search grid only treats a cell as an obstacle when it is both shallow
# and well known.  Unvisited cells stay free, so candidate paths may cross them.
sg = build_search_grid(belief, PbacsConfig(), scenario)
show(f"search grid ('X' = obstacle, threshold {sg.threshold:.2f} ft^2)",
     sg.obstacles.reshape(scenario.depth_grid.shape), lambda v: "X" if v else ".")
