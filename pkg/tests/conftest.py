from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from channelsearch.scenario import BathyScenario


def bfs_length(blocked: np.ndarray, rows: int, cols: int, starts, goals, connectivity: int = 8) -> int | None:
    """Fewest waypoints on any unblocked start-to-goal path (independent oracle)."""
    steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr or dc)]
    if connectivity == 4:
        steps = [(dr, dc) for dr, dc in steps if not (dr and dc)]
    goals = set(goals)
    dist = {s: 1 for s in starts if not blocked[s]}
    q = deque(dist)
    while q:
        i = q.popleft()
        if i in goals:
            return dist[i]
        r, c = divmod(i, cols)
        for dr, dc in steps:
            nr, nc = r + dr, c + dc
            j = nr * cols + nc
            if 0 <= nr < rows and 0 <= nc < cols and not blocked[j] and j not in dist:
                dist[j] = dist[i] + 1
                q.append(j)
    return None


def make_grid(rows: int, cols: int, depths=None, cell_size: float = 20.0, name: str = "grid") -> BathyScenario:
    depths = np.full(rows * cols, 20.0) if depths is None else np.asarray(depths, dtype=float)
    return BathyScenario(name, rows, cols, cell_size, 0.0, (0.0, 0.0), depths,
                         frozenset(range(cols)), frozenset(range((rows - 1) * cols, rows * cols)))


@pytest.fixture
def small_grid():
    return make_grid(5, 5)
