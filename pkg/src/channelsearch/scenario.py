"""Ground-truth bathymetry grids.

A scenario is a rows x cols grid of depths (feet) with a start region and a
goal region on opposite edges.  Cells are addressed either by a flat index
``row * cols + col`` or by a :class:`Cell` pair; all planning happens in grid
coordinates and the scenario's tilt/origin are applied only when converting to
world positions (meters).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

SHAPES = ("straight", "diagonal", "single-bend", "dead-end")


class ScenarioError(ValueError):
    """Invalid scenario file or parameters; the message names the field."""


class Cell(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class BathyScenario:
    name: str
    rows: int
    cols: int
    cell_size: float
    rotation: float
    origin: tuple[float, float]
    depths: np.ndarray
    start_cells: frozenset[int]
    goal_cells: frozenset[int]
    _centers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.rows, (int, np.integer)) or self.rows <= 0:
            raise ScenarioError(f"rows: must be a positive int, got {self.rows!r}")
        if not isinstance(self.cols, (int, np.integer)) or self.cols <= 0:
            raise ScenarioError(f"cols: must be a positive int, got {self.cols!r}")
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise ScenarioError(f"cell_size_m: must be positive, got {self.cell_size!r}")
        if not math.isfinite(self.rotation):
            raise ScenarioError("rotation_deg: must be finite")
        depths = np.asarray(self.depths, dtype=float).ravel()
        m = self.rows * self.cols
        if depths.size != m:
            raise ScenarioError(f"depths_ft: expected {m} values (rows*cols), got {depths.size}")
        if not np.all(np.isfinite(depths)) or np.any(depths <= 0):
            raise ScenarioError("depths_ft: every depth must be finite and > 0")
        depths.setflags(write=False)
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        for label, cells in (("start_cells", self.start_cells), ("goal_cells", self.goal_cells)):
            cells = frozenset(int(c) for c in cells)
            if not cells:
                raise ScenarioError(f"{label}: must be nonempty")
            if any(c < 0 or c >= m for c in cells):
                raise ScenarioError(f"{label}: index out of range [0, {m})")
            object.__setattr__(self, label, cells)
        if self.start_cells & self.goal_cells:
            raise ScenarioError("start_cells/goal_cells: overlapping regions")
        object.__setattr__(self, "_centers", _compute_centers(self))

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def depth_grid(self) -> np.ndarray:
        return self.depths.reshape(self.rows, self.cols)

    @property
    def centers(self) -> np.ndarray:
        """World positions of all cell centers, shape (n_cells, 2)."""
        return self._centers

    def flat(self, cell: Cell | tuple[int, int]) -> int:
        r, c = cell
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError(f"cell {tuple(cell)} outside {self.rows}x{self.cols} grid")
        return int(r) * self.cols + int(c)

    def cell(self, index: int) -> Cell:
        if not 0 <= index < self.n_cells:
            raise IndexError(f"cell index {index} outside grid of {self.n_cells}")
        return Cell(*divmod(int(index), self.cols))

    def __eq__(self, other):
        if not isinstance(other, BathyScenario):
            return NotImplemented
        return (
            self.name == other.name
            and self.rows == other.rows
            and self.cols == other.cols
            and self.cell_size == other.cell_size
            and self.rotation == other.rotation
            and self.origin == other.origin
            and np.array_equal(self.depths, other.depths)
            and self.start_cells == other.start_cells
            and self.goal_cells == other.goal_cells
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rows": int(self.rows),
            "cols": int(self.cols),
            "cell_size_m": float(self.cell_size),
            "rotation_deg": float(self.rotation),
            "origin_m": [self.origin[0], self.origin[1]],
            "depths_ft": [float(d) for d in self.depths],
            "start_cells": sorted(self.start_cells),
            "goal_cells": sorted(self.goal_cells),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BathyScenario":
        required = ("name", "rows", "cols", "cell_size_m", "rotation_deg", "origin_m",
                    "depths_ft", "start_cells", "goal_cells")
        for key in required:
            if key not in data:
                raise ScenarioError(f"{key}: missing field")
        origin = data["origin_m"]
        if not isinstance(origin, (list, tuple)) or len(origin) != 2:
            raise ScenarioError("origin_m: expected [x, y]")
        try:
            return cls(
                name=str(data["name"]),
                rows=_as_int(data["rows"], "rows"),
                cols=_as_int(data["cols"], "cols"),
                cell_size=float(data["cell_size_m"]),
                rotation=float(data["rotation_deg"]),
                origin=(float(origin[0]), float(origin[1])),
                depths=np.asarray(data["depths_ft"], dtype=float),
                start_cells=frozenset(_as_int(c, "start_cells") for c in data["start_cells"]),
                goal_cells=frozenset(_as_int(c, "goal_cells") for c in data["goal_cells"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"malformed field value: {exc}") from exc


def _as_int(value, label: str) -> int:
    if isinstance(value, bool) or not float(value).is_integer():
        raise ScenarioError(f"{label}: expected integer, got {value!r}")
    return int(value)


def _rotation_matrix(degrees: float) -> np.ndarray:
    th = math.radians(degrees)
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s], [s, c]])


def _compute_centers(s: BathyScenario) -> np.ndarray:
    rr, cc = np.divmod(np.arange(s.n_cells), s.cols)
    local = np.column_stack(((cc + 0.5) * s.cell_size, (rr + 0.5) * s.cell_size))
    return local @ _rotation_matrix(s.rotation).T + np.asarray(s.origin)


def load_scenario(path: str | Path) -> BathyScenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a JSON object")
    return BathyScenario.from_dict(data)


def save_scenario(s: BathyScenario, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(s.to_dict()))
    return path


def cell_center(s: BathyScenario, c: Cell | tuple[int, int] | int) -> np.ndarray:
    """World position (meters) of a cell center."""
    index = int(c) if isinstance(c, (int, np.integer)) else s.flat(c)
    if not 0 <= index < s.n_cells:
        raise IndexError(f"cell index {index} outside grid")
    return s.centers[index].copy()


def world_to_grid(s: BathyScenario, position) -> np.ndarray:
    """Grid-frame coordinates (x along columns, y along rows), meters."""
    p = np.asarray(position, dtype=float) - np.asarray(s.origin)
    return p @ _rotation_matrix(s.rotation)


def grid_to_world(s: BathyScenario, local) -> np.ndarray:
    return np.asarray(local, dtype=float) @ _rotation_matrix(s.rotation).T + np.asarray(s.origin)


def position_to_cell(s: BathyScenario, position) -> int | None:
    """Flat index of the cell containing ``position``, or None outside the field."""
    x, y = world_to_grid(s, position)
    col = math.floor(x / s.cell_size)
    row = math.floor(y / s.cell_size)
    if 0 <= row < s.rows and 0 <= col < s.cols:
        return row * s.cols + col
    return None


def mirror_scenario(s: BathyScenario, axis: str) -> BathyScenario:
    """Reflect left-right (``horizontal``) or top-bottom (``vertical``)."""
    if axis == "horizontal":
        grid = s.depth_grid[:, ::-1]

        def reflect(i):
            r, c = divmod(i, s.cols)
            return r * s.cols + (s.cols - 1 - c)
    elif axis == "vertical":
        grid = s.depth_grid[::-1, :]

        def reflect(i):
            r, c = divmod(i, s.cols)
            return (s.rows - 1 - r) * s.cols + c
    else:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    name = s.name[:-len("-mirror")] if s.name.endswith("-mirror") else s.name + "-mirror"
    return BathyScenario(
        name=name,
        rows=s.rows,
        cols=s.cols,
        cell_size=s.cell_size,
        rotation=s.rotation,
        origin=s.origin,
        depths=grid.ravel().copy(),
        start_cells=frozenset(reflect(i) for i in s.start_cells),
        goal_cells=frozenset(reflect(i) for i in s.goal_cells),
    )


def _segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, float)
    ab = np.asarray(b, float) - a
    t = np.clip(((points - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _centerline(shape: str, rows: int, cols: int, rng: np.random.Generator) -> list[tuple[float, float]]:
    last = rows - 1
    lo, hi = 0.2 * (cols - 1), 0.8 * (cols - 1)
    if shape == "straight":
        c0 = rng.uniform(0.3 * (cols - 1), 0.7 * (cols - 1))
        return [(0.0, c0), (last, c0)]
    if shape == "diagonal":
        c0 = rng.uniform(0.1 * (cols - 1), 0.3 * (cols - 1))
        c1 = rng.uniform(0.7 * (cols - 1), 0.9 * (cols - 1))
        return [(0.0, c0), (last, c1)]
    if shape == "single-bend":
        c0 = rng.uniform(lo, 0.35 * (cols - 1))
        c_bend = rng.uniform(0.7 * (cols - 1), hi)
        r_bend = rng.uniform(0.4 * last, 0.6 * last)
        c1 = rng.uniform(lo, 0.35 * (cols - 1))
        return [(0.0, c0), (r_bend, c_bend), (last, c1)]
    if shape == "dead-end":
        c0 = rng.uniform(0.3 * (cols - 1), 0.5 * (cols - 1))
        c1 = c0 + rng.uniform(0.1, 0.25) * (cols - 1)
        r_end = rng.uniform(0.5 * last, 0.6 * last)
        return [(0.0, c0), (r_end, c1)]
    raise ScenarioError(f"shape: unknown channel shape {shape!r}; expected one of {SHAPES}")


def generate_scenario(
    shape: str,
    rows: int = 38,
    cols: int = 25,
    channel_depth: float = 24.0,
    background_depth: float = 10.0,
    seed: int = 0,
    *,
    cell_size: float = 20.0,
    rotation: float = 0.0,
    origin: tuple[float, float] = (0.0, 0.0),
    half_width: float = 1.5,
    falloff: float = 2.0,
    center_bonus: float = 2.0,
    noise_ft: float = 2.0,
    min_depth: float = 6.0,
    name: str | None = None,
) -> BathyScenario:
    """Procedural channel scenario; start region is row 0, goal region the last row.

    The deep core (``<= half_width`` cells from the centerline) is at least
    ``channel_depth``; depths taper with a cosine profile over ``falloff``
    cells to a smoothly perturbed background.
    """
    if shape not in SHAPES:
        raise ScenarioError(f"shape: unknown channel shape {shape!r}; expected one of {SHAPES}")
    if channel_depth <= background_depth:
        raise ScenarioError("channel_depth: must exceed background_depth")
    reach = half_width + falloff
    min_cols = int(math.ceil(2 * reach + 3))
    min_rows = 10 if shape == "dead-end" else 4
    if rows < min_rows or cols < min_cols:
        raise ScenarioError(
            f"rows/cols: {rows}x{cols} too small for a {shape!r} channel "
            f"(need at least {min_rows} rows and {min_cols} cols)"
        )
    rng = np.random.default_rng(seed)
    line = _centerline(shape, rows, cols, rng)
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    pts = np.column_stack((rr, cc)).astype(float)
    dist = np.min([_segment_distance(pts, a, b) for a, b in zip(line[:-1], line[1:])], axis=0)

    noise = gaussian_filter(rng.standard_normal((rows, cols)), sigma=2.0, mode="reflect").ravel()
    peak = np.max(np.abs(noise))
    background = background_depth + (noise_ft * noise / peak if peak > 0 else 0.0)
    background = np.maximum(background, min_depth)

    taper = np.where(
        dist <= half_width,
        1.0,
        np.where(dist < reach, 0.5 * (1 + np.cos(np.pi * (dist - half_width) / falloff)), 0.0),
    )
    depths = background + (channel_depth - background) * taper
    depths += center_bonus * np.clip(1.0 - dist / half_width, 0.0, 1.0)

    return BathyScenario(
        name=name or f"{shape}-s{seed}",
        rows=rows,
        cols=cols,
        cell_size=cell_size,
        rotation=rotation,
        origin=origin,
        depths=np.round(depths, 6),
        start_cells=frozenset(range(cols)),
        goal_cells=frozenset(range((rows - 1) * cols, rows * cols)),
    )


def generate_suite(
    kind: str = "acceptance", seed: int = 0, rows: int = 38, cols: int = 25, rotation: float = 15.0
) -> list[BathyScenario]:
    """Scenario suites used by the benchmarks.

    ``acceptance``: straight, diagonal, single-bend, dead-end and their
    left-right mirrors (8 scenarios).  ``paper``: ten scenarios, six base
    layouts plus four mirrors, matching the size of the published suite.
    """
    if kind == "acceptance":
        layout = [(shape, i) for i, shape in enumerate(SHAPES)]
        mirrored = [0, 1, 2, 3]
    elif kind == "paper":
        layout = [(shape, i) for i, shape in enumerate(SHAPES)]
        layout += [("straight", 4), ("diagonal", 5)]
        mirrored = [1, 2, 3, 5]
    else:
        raise ValueError(f"unknown suite kind {kind!r}")
    suite = [
        generate_scenario(shape, rows, cols, seed=seed + offset, rotation=rotation,
                          name=f"bathy{i + 1}-{shape}")
        for i, (shape, offset) in enumerate(layout)
    ]
    suite += [mirror_scenario(suite[i], "horizontal") for i in mirrored]
    return suite


def deep_mask(s: BathyScenario, threshold: float) -> np.ndarray:
    return s.depths >= threshold


def flood_fill_connected(mask: np.ndarray, rows: int, cols: int, starts: Iterable[int],
                         goals: Iterable[int], connectivity: int = 8) -> bool:
    """True when some start cell reaches a goal cell through ``mask`` cells."""
    from collections import deque

    goals = set(goals)
    frontier = deque(i for i in starts if mask[i])
    seen = set(frontier)
    steps = _steps(connectivity)
    while frontier:
        i = frontier.popleft()
        if i in goals:
            return True
        r, c = divmod(i, cols)
        for dr, dc in steps:
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                j = nr * cols + nc
                if mask[j] and j not in seen:
                    seen.add(j)
                    frontier.append(j)
    return False


def _steps(connectivity: int) -> Sequence[tuple[int, int]]:
    four = ((-1, 0), (1, 0), (0, -1), (0, 1))
    if connectivity == 4:
        return four
    if connectivity == 8:
        return four + ((-1, -1), (-1, 1), (1, -1), (1, 1))
    raise ValueError("connectivity must be 4 or 8")
