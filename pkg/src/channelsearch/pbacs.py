"""Proposal Based Adaptive Channel Search.

Stages: each vehicle first runs a sweep transect, then repeatedly proposes a
candidate start-to-goal path through cells that are not confirmed shallow,
bids for it against the other vehicles' proposals, and surveys the path it
wins.  The mission ends when some path consists only of confirmed deep cells.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .gpr import BeliefMap
from .scenario import BathyScenario


@dataclass(frozen=True)
class PbacsConfig:
    eta: float = 0.33
    depth_threshold: float = 20.0
    t_wait: float = 10.0
    gamma: float = 0.9
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must be in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.t_wait < 0:
            raise ValueError("t_wait must be >= 0")


def variance_threshold(variance, eta: float = 0.33) -> float:
    variance = np.asarray(variance, dtype=float)
    if variance.size == 0:
        raise ValueError("variance vector is empty")
    lo, hi = float(variance.min()), float(variance.max())
    return lo + eta * (hi - lo)


@dataclass(frozen=True)
class SearchGrid:
    obstacles: np.ndarray
    rows: int
    cols: int
    threshold: float = math.nan

    @property
    def n_obstacles(self) -> int:
        return int(self.obstacles.sum())


def build_search_grid(belief: BeliefMap, cfg: PbacsConfig, grid: BathyScenario) -> SearchGrid:
    """Obstacle iff the mean is shallower than D *and* the variance is below threshold."""
    th = variance_threshold(belief.variance, cfg.eta)
    obstacles = (belief.mean < cfg.depth_threshold) & (belief.variance < th)
    return SearchGrid(obstacles, grid.rows, grid.cols, th)


@dataclass(frozen=True)
class CandidatePath:
    waypoints: tuple[int, ...]
    proposer: int = -1
    cost: float = 0.0
    time: float = 0.0

    @property
    def n_waypoints(self) -> int:
        return len(self.waypoints)

    @property
    def cells(self) -> frozenset[int]:
        return frozenset(self.waypoints)


_STEPS4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_STEPS8 = _STEPS4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def _heuristics(rows: int, cols: int, goals: Sequence[int], connectivity: int) -> tuple[np.ndarray, np.ndarray]:
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    gr, gc = np.divmod(np.asarray(goals), cols)
    dr = np.abs(rr[:, None] - gr[None, :])
    dc = np.abs(cc[:, None] - gc[None, :])
    steps = np.maximum(dr, dc) if connectivity == 8 else dr + dc
    return steps.min(axis=1), np.sqrt(dr * dr + dc * dc).min(axis=1)


def grid_path(blocked: np.ndarray, rows: int, cols: int, starts: Iterable[int], goals: Iterable[int],
              connectivity: int = 8) -> list[int] | None:
    """Multi-source multi-goal A* with the fewest waypoints.

    Among paths with equally few waypoints, the one with the shortest
    Euclidean length is returned.  The heuristic is the Chebyshev (8-connected)
    or Manhattan (4-connected) distance to the nearest goal, which never
    overestimates the remaining step count.
    """
    goals = [g for g in set(goals) if not blocked[g]]
    starts = sorted(s for s in set(starts) if not blocked[s])
    if not goals or not starts:
        return None
    goal_set = set(goals)
    h_steps, h_len = _heuristics(rows, cols, goals, connectivity)
    steps = _STEPS8 if connectivity == 8 else _STEPS4
    best: dict[int, tuple[int, float]] = {}
    parent: dict[int, int] = {}
    heap = []
    for s in starts:
        best[s] = (0, 0.0)
        parent[s] = -1
        heapq.heappush(heap, (int(h_steps[s]), float(h_len[s]), s, 0, 0.0))
    closed = set()
    while heap:
        _, _, node, g_steps, g_len = heapq.heappop(heap)
        if node in closed or best[node] != (g_steps, g_len):
            continue
        if node in goal_set:
            path = []
            while node != -1:
                path.append(node)
                node = parent[node]
            return path[::-1]
        closed.add(node)
        r, c = divmod(node, cols)
        for dr, dc in steps:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols):
                continue
            nxt = nr * cols + nc
            if blocked[nxt] or nxt in closed:
                continue
            cand = (g_steps + 1, g_len + (1.4142135623730951 if dr and dc else 1.0))
            if nxt not in best or cand < best[nxt]:
                best[nxt] = cand
                parent[nxt] = node
                heapq.heappush(heap, (cand[0] + int(h_steps[nxt]), cand[1] + float(h_len[nxt]), nxt, *cand))
    return None


def find_candidate_path(sg: SearchGrid, starts, goals, assigned=frozenset(), connectivity: int = 8,
                        proposer: int = -1, time: float = 0.0) -> CandidatePath | None:
    blocked = sg.obstacles.copy()
    if assigned:
        blocked[list(assigned)] = True
    path = grid_path(blocked, sg.rows, sg.cols, starts, goals, connectivity)
    if path is None:
        return None
    return CandidatePath(tuple(path), proposer, 0.0, time)


def confirmed_deep(belief: BeliefMap, cfg: PbacsConfig) -> np.ndarray:
    th = variance_threshold(belief.variance, cfg.eta)
    return (belief.mean >= cfg.depth_threshold) & (belief.variance < th)


def check_channel_found(belief: BeliefMap, cfg: PbacsConfig, grid: BathyScenario) -> CandidatePath | None:
    """A start-to-goal path of confirmed deep cells (deep with low variance), if any."""
    path = grid_path(~confirmed_deep(belief, cfg), grid.rows, grid.cols, grid.start_cells,
                     grid.goal_cells, cfg.connectivity)
    return None if path is None else CandidatePath(tuple(path))


def has_obstacles(path: Sequence[int], sg: SearchGrid) -> bool:
    return bool(len(path)) and bool(np.any(sg.obstacles[list(path)]))


def choose_direction(path: Sequence[int], p_a: int, variance, gamma: float = 0.9,
                     threshold: float | None = None) -> list[int]:
    """Traversal order starting at waypoint index ``p_a``.

    An unexplored endpoint (variance at or above ``threshold``) is preferred
    when only one end is unexplored; otherwise each direction is scored by its
    variances discounted by ``gamma**k`` at k steps from ``p_a``.  Ties go
    towards the goal end (the last waypoint).  After reaching the chosen end
    the vehicle covers the rest of the path from ``p_a - 1`` (or ``p_a + 1``).
    """
    path = list(path)
    n = len(path)
    if not 0 <= p_a < n:
        raise IndexError("p_a must index a waypoint of the path")
    forward = path[p_a:] + path[:p_a][::-1]
    backward = path[p_a::-1] + path[p_a + 1:]
    if p_a == 0:
        return forward
    if p_a == n - 1:
        return backward
    var = np.asarray(variance, dtype=float)
    if threshold is not None:
        goal_open = var[path[-1]] >= threshold
        start_open = var[path[0]] >= threshold
        if goal_open != start_open:
            return forward if goal_open else backward
    fwd = sum(gamma ** k * var[path[p_a + k]] for k in range(1, n - p_a))
    bwd = sum(gamma ** k * var[path[p_a - k]] for k in range(1, p_a + 1))
    return forward if fwd >= bwd else backward


@dataclass
class ProposalOutcome:
    winners: dict
    reserved: frozenset
    won: bool = False
    proposers: tuple = ()

    @property
    def losers(self) -> set:
        return set(self.proposers) - set(self.winners)


def resolve_proposals(own: CandidatePath | None, received: Sequence[CandidatePath] = ()) -> ProposalOutcome:
    """Lowest-cost bid wins among proposals sharing a cell; ties go to the lowest agent id.

    Every agent running this on the same proposal multiset obtains the same
    winner set, and the winners' paths are pairwise cell-disjoint.
    """
    latest = {}
    for p in ([own] if own is not None else []) + list(received):
        if p.proposer not in latest or p.time >= latest[p.proposer].time:
            latest[p.proposer] = p
    taken: set[int] = set()
    winners = {}
    for p in sorted(latest.values(), key=lambda p: (p.cost, p.proposer)):
        cells = p.cells
        if cells & taken:
            continue
        winners[p.proposer] = p
        taken |= cells
    won = own is not None and own.proposer in winners
    return ProposalOutcome(winners, frozenset(taken), won, tuple(latest))


@dataclass(frozen=True)
class Transect:
    row: int
    cells: tuple[int, ...]


def _region_row(grid: BathyScenario, cells) -> int:
    return int(round(float(np.mean([c // grid.cols for c in cells]))))


def sweep_assignment(n: int, grid: BathyScenario) -> list[Transect]:
    """Sweep lines: start region, goal region, then equally spaced rows between."""
    if n < 1:
        raise ValueError("need at least one vehicle")
    start_row = _region_row(grid, grid.start_cells)
    goal_row = _region_row(grid, grid.goal_cells)
    rows = [start_row]
    if n >= 2:
        rows.append(goal_row)
        rows += [int(round(start_row + i * (goal_row - start_row) / (n - 1))) for i in range(1, n - 1)]
    return [Transect(r, tuple(r * grid.cols + c for c in range(grid.cols))) for r in rows]


# -- proposal messages -----------------------------------------------------

@dataclass(frozen=True)
class Proposal:
    agent_id: int
    waypoints: tuple[int, ...]
    cost_m: float
    timestamp_s: float
    round_id: int = 0
    iteration: int = 0

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "waypoints": list(self.waypoints),
            "cost_m": self.cost_m,
            "timestamp_s": self.timestamp_s,
            "round_id": self.round_id,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Proposal":
        return cls(int(d["agent_id"]), tuple(int(w) for w in d["waypoints"]), float(d["cost_m"]),
                   float(d["timestamp_s"]), int(d.get("round_id", 0)), int(d.get("iteration", 0)))

    def as_candidate(self) -> CandidatePath:
        return CandidatePath(self.waypoints, self.agent_id, self.cost_m, self.timestamp_s)


# -- per-vehicle state machine ---------------------------------------------

SWEEP, EXPLORE, FALLBACK, DONE = "sweep", "path-explore", "mdp-fallback", "done"


@dataclass
class PbacsEvents:
    time: float
    position: np.ndarray
    belief: BeliefMap | None = None
    proposals: Sequence[Proposal] = ()
    idle: bool = False
    # consensus epoch shared by all vehicles; proposals are only compared within one epoch
    epoch: int | None = None


@dataclass
class PbacsOutput:
    proposals: list = field(default_factory=list)
    waypoints: list | None = None
    channel: CandidatePath | None = None
    mode: str = SWEEP

    @property
    def mission_complete(self) -> bool:
        return self.channel is not None


@dataclass
class PbacsAgent:
    """One vehicle's planner; advanced only through :meth:`step`."""

    agent_id: int
    grid: BathyScenario
    cfg: PbacsConfig = PbacsConfig()
    mode: str = SWEEP
    p_curr: tuple = ()
    p_prop: tuple = ()
    won: bool = False
    round_id: int = 0
    iteration: int = 0
    pending: bool = False
    last_prop_time: float = -math.inf
    reserved: frozenset = frozenset()
    received: dict = field(default_factory=dict)
    search_grid: SearchGrid | None = None
    belief: BeliefMap | None = None
    traversing: bool = False
    own_proposal: Proposal | None = None

    def step(self, ev: PbacsEvents) -> PbacsOutput:
        out = PbacsOutput(mode=self.mode)
        if self.mode == DONE:
            return out
        for p in ev.proposals:
            if p.agent_id != self.agent_id:
                self.received[p.agent_id] = p
        if self.mode == SWEEP:
            if ev.belief is not None:
                self.belief = ev.belief
                self.round_id = ev.epoch if ev.epoch is not None else self.round_id + 1
            if not ev.idle:
                return out
            # the latest consensus data has not been planned on yet: use it right away
            self.mode = EXPLORE
            if self.belief is not None:
                self._plan_round(ev, self.belief, out)
            out.mode = self.mode
            return out
        if ev.idle:
            self.traversing = False
        if ev.belief is not None:
            self.round_id = ev.epoch if ev.epoch is not None else self.round_id + 1
            self._plan_round(ev, ev.belief, out)
        elif self.pending and ev.time - self.last_prop_time > self.cfg.t_wait:
            self._check_proposals(ev, out)
        out.mode = self.mode
        return out

    def _plan_round(self, ev: PbacsEvents, belief: BeliefMap, out: PbacsOutput) -> None:
        self.belief = belief
        self.search_grid = build_search_grid(belief, self.cfg, self.grid)
        channel = check_channel_found(belief, self.cfg, self.grid)
        if channel is not None:
            self.mode = DONE
            self.pending = False
            out.channel = CandidatePath(channel.waypoints, self.agent_id, 0.0, ev.time)
            return
        # proposals expire when new consensus data arrives
        self.iteration = 0
        self.won = False
        self.reserved = frozenset()
        self.received = {k: p for k, p in self.received.items() if p.round_id == self.round_id}
        self._propose(ev, out)

    def _propose(self, ev: PbacsEvents, out: PbacsOutput) -> None:
        sg = self.search_grid
        new = find_candidate_path(sg, self.grid.start_cells, self.grid.goal_cells, self.reserved,
                                  self.cfg.connectivity, self.agent_id, ev.time)
        if new is None:
            self.mode = FALLBACK
            self.pending = False
            return
        self.mode = EXPLORE
        curr_ok = bool(self.p_curr) and not (set(self.p_curr) & self.reserved)
        cond1 = has_obstacles(self.p_curr, sg)
        cond2 = len(self.p_curr) > new.n_waypoints
        self.p_prop = new.waypoints if (cond1 or cond2 or not curr_ok) else self.p_curr
        cost = float(np.min(np.linalg.norm(self.grid.centers[list(self.p_prop)] - ev.position, axis=1)))
        msg = Proposal(self.agent_id, tuple(self.p_prop), cost, ev.time, self.round_id, self.iteration)
        self.received = {k: p for k, p in self.received.items() if p.round_id == self.round_id}
        self.own_proposal = msg
        self.pending = True
        self.last_prop_time = ev.time
        out.proposals.append(msg)

    def _check_proposals(self, ev: PbacsEvents, out: PbacsOutput) -> None:
        current = [p.as_candidate() for p in self.received.values() if p.round_id == self.round_id]
        outcome = resolve_proposals(self.own_proposal.as_candidate(), current)
        self.pending = False
        if outcome.won:
            self.won = True
            if tuple(self.p_prop) != tuple(self.p_curr) or not self.traversing:
                pos = self.grid.centers[list(self.p_prop)]
                p_a = int(np.argmin(np.linalg.norm(pos - ev.position, axis=1)))
                self.p_curr = tuple(self.p_prop)
                out.waypoints = choose_direction(self.p_curr, p_a, self.belief.variance, self.cfg.gamma,
                                                 self.search_grid.threshold)
                self.traversing = True
            return
        self.reserved = self.reserved | outcome.reserved
        self.iteration += 1
        self._propose(ev, out)


def pbacs_step(agent: PbacsAgent, events: PbacsEvents) -> PbacsOutput:
    return agent.step(events)
