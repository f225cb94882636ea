"""Boustrophedon (lawnmower) coverage baseline.

Lanes run parallel to the start-to-goal axis (grid columns).  The lanes are
split into ``n`` contiguous strips, one per vehicle, and each vehicle
serpentines through its strip starting at the start edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import BathyScenario, grid_to_world


class LawnmowerError(ValueError):
    pass


@dataclass(frozen=True)
class LawnmowerPlan:
    waypoints: tuple[np.ndarray, ...]
    lanes: tuple[tuple[int, ...], ...]
    spacing: float

    @property
    def n_vehicles(self) -> int:
        return len(self.waypoints)

    def path_lengths(self) -> list[float]:
        return [float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1))) for w in self.waypoints]


def generate_lawnmower(scenario: BathyScenario, n: int, spacing: float | None = None) -> LawnmowerPlan:
    """Per-vehicle waypoint lists (world meters) covering the field in ``n`` strips."""
    if n < 1:
        raise LawnmowerError("need at least one vehicle")
    spacing = scenario.cell_size if spacing is None else float(spacing)
    if not 0 < spacing <= scenario.cell_size:
        raise LawnmowerError("spacing must be in (0, cell_size] to cover every cell")
    width = scenario.cols * scenario.cell_size
    n_lanes = math.ceil(width / spacing - 1e-9)
    if n_lanes < n:
        raise LawnmowerError(f"field of {n_lanes} lanes is narrower than {n} vehicles")
    lane_x = (np.arange(n_lanes) + 0.5) * (width / n_lanes)
    y_top = 0.5 * scenario.cell_size
    y_bottom = (scenario.rows - 0.5) * scenario.cell_size
    plans, strips = [], []
    for strip in np.array_split(np.arange(n_lanes), n):
        local = []
        for k, lane in enumerate(strip):
            ends = (y_top, y_bottom) if k % 2 == 0 else (y_bottom, y_top)
            local += [(lane_x[lane], ends[0]), (lane_x[lane], ends[1])]
        plans.append(grid_to_world(scenario, np.array(local)))
        strips.append(tuple(int(i) for i in strip))
    return LawnmowerPlan(tuple(plans), tuple(strips), spacing)


def covered_cells(scenario: BathyScenario, plan: LawnmowerPlan) -> list[set[int]]:
    """Cells each vehicle's lanes pass over (lanes are straight columns in the grid frame)."""
    width = scenario.cols * scenario.cell_size
    n_lanes = sum(len(s) for s in plan.lanes)
    out = []
    for strip in plan.lanes:
        cells = set()
        for lane in strip:
            col = int(((lane + 0.5) * width / n_lanes) // scenario.cell_size)
            cells.update(r * scenario.cols + col for r in range(scenario.rows))
        out.append(cells)
    return out
