"""Discrete-time multi-vehicle mission engine.

Each tick: vehicles move toward their waypoints, sample the depth below them,
and, every ``consensus_period`` seconds, refit their local GPR, fuse beliefs
by consensus over the realized communication graph, check for a channel and
re-plan.  Proposal messages are delivered one tick after sending.

All randomness flows from the mission seed through named sub-streams, so a
mission is a pure function of (scenario, planner, n, config).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import binary_dilation

from .consensus import BeliefFusion, CommGraph, ConsensusConfig
from .gpr import BeliefMap, FastGprConfig, GprCache, KernelConfig, Measurement, incremental_update, kernel_matrix
from .lawnmower import generate_lawnmower
from .mdp import MdpConfig, MdpState, MyopicPlanner, heading_index, reward_field, sample_maxima, transition, available_actions
from .pbacs import (DONE, FALLBACK, CandidatePath, PbacsAgent, PbacsConfig, PbacsEvents, Proposal,
                    check_channel_found, sweep_assignment)
from .scenario import BathyScenario

PLANNERS = ("pbacs", "ucb", "mvi", "lawnmower")
STREAMS = {"sensor": 0, "dropout": 1, "transition": 2, "subset": 3, "maxima": 4}
MODES = ("sweep", "path-explore", "mdp-fallback", "lawnmower", "mdp", "done")


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name],)))


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    sensor_hz: float = 10.0
    sigma_n: float = 0.2
    timeout: float = 8000.0
    seed: int = 0
    dropout: float = 0.0
    comm_range: float = math.inf
    consensus_period: float = 60.0
    speed: float = 2.4
    arrival_radius: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.sensor_hz * self.dt < 1:
            raise ValueError("sensor rate must give at least one sample per tick")
        if self.sigma_n < 0 or self.timeout <= 0 or self.speed < 0:
            raise ValueError("sigma_n, timeout and speed must be non-negative (timeout > 0)")
        if not 0 <= self.dropout <= 1:
            raise ValueError("dropout must be in [0, 1]")
        if not self.consensus_period > 0:
            raise ValueError("consensus_period must be > 0")

    @property
    def samples_per_tick(self) -> int:
        return int(round(self.sensor_hz * self.dt))


_SECTIONS = {
    "sim": SimConfig,
    "gpr": FastGprConfig,
    "kernel": KernelConfig,
    "consensus": ConsensusConfig,
    "pbacs": PbacsConfig,
    "mdp": MdpConfig,
}


@dataclass(frozen=True)
class MissionConfig:
    """Every simulator and planner knob; serializes to the JSON ``--config`` file."""

    sim: SimConfig = SimConfig()
    gpr: FastGprConfig = FastGprConfig()
    kernel: KernelConfig = KernelConfig()
    consensus: ConsensusConfig = ConsensusConfig()
    pbacs: PbacsConfig = PbacsConfig()
    mdp: MdpConfig = MdpConfig()
    # reward used by PBACS vehicles that fall back to MDP surveying
    fallback_reward: str = "UCB"
    lawnmower_spacing: float | None = None

    def to_dict(self) -> dict:
        d = {name: _encode(asdict(getattr(self, name))) for name in _SECTIONS}
        d["fallback_reward"] = self.fallback_reward
        d["lawnmower_spacing"] = self.lawnmower_spacing
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MissionConfig":
        unknown = set(data) - set(_SECTIONS) - {"fallback_reward", "lawnmower_spacing"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, typ in _SECTIONS.items():
            section = dict(data.get(name, {}))
            allowed = {f.name for f in fields(typ)}
            bad = set(section) - allowed
            if bad:
                raise ValueError(f"unknown keys in config section {name!r}: {sorted(bad)}")
            if name == "sim" and section.get("comm_range") is None and "comm_range" in section:
                section["comm_range"] = math.inf
            kwargs[name] = typ(**section)
        for key in ("fallback_reward", "lawnmower_spacing"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)

    def with_overrides(self, *, seed=None, depth_threshold=None, timeout=None) -> "MissionConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sim=replace(cfg.sim, seed=int(seed)))
        if depth_threshold is not None:
            cfg = replace(cfg, pbacs=replace(cfg.pbacs, depth_threshold=float(depth_threshold)))
        if timeout is not None:
            cfg = replace(cfg, sim=replace(cfg.sim, timeout=float(timeout)))
        return cfg


def _encode(d: dict) -> dict:
    # JSON has no infinity; an unlimited comm range is written as null
    return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


# -- vehicles and sensing ------------------------------------------------------

@dataclass(frozen=True)
class VehicleState:
    position: tuple[float, float]
    heading: float = 0.0
    speed: float = 2.4
    mode: str = "sweep"
    waypoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown vehicle mode {self.mode!r}")


def step_vehicle(v: VehicleState, dt: float, arrival_radius: float = 0.5) -> VehicleState:
    """Move ``speed * dt`` along the waypoint list, popping waypoints on arrival.

    Distance left over after reaching a waypoint is spent toward the next one.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x, y = v.position
    heading = v.heading
    budget = v.speed * dt
    wps = list(v.waypoints)
    while wps and budget > 0:
        wx, wy = wps[0]
        dx, dy = wx - x, wy - y
        d = math.hypot(dx, dy)
        if d > 0:
            heading = math.atan2(dy, dx)
        if d <= budget:
            x, y = wx, wy
            budget -= d
            wps.pop(0)
        else:
            x += dx / d * budget
            y += dy / d * budget
            if d - budget <= arrival_radius:
                wps.pop(0)
            budget = 0.0
    return VehicleState((x, y), heading, v.speed, v.mode, tuple(wps))


class _Locator:
    """Fast world-position → cell lookup for one scenario."""

    def __init__(self, s: BathyScenario):
        a = math.radians(s.rotation)
        self.c, self.s = math.cos(a), math.sin(a)
        self.ox, self.oy = float(s.origin[0]), float(s.origin[1])
        self.cs, self.rows, self.cols = s.cell_size, s.rows, s.cols

    def cell(self, pos) -> int | None:
        dx, dy = pos[0] - self.ox, pos[1] - self.oy
        gx = self.c * dx + self.s * dy
        gy = -self.s * dx + self.c * dy
        col, row = math.floor(gx / self.cs), math.floor(gy / self.cs)
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row * self.cols + col
        return None


def sample_depth(v: VehicleState, scenario: BathyScenario, rng: np.random.Generator, sigma_n: float = 0.2,
                 time: float = 0.0, agent_id: int = 0, samples: int = 1) -> Measurement | None:
    """Noisy depth of the cell below the vehicle (mean of ``samples`` readings), or None off-field."""
    cell = _Locator(scenario).cell(v.position)
    if cell is None:
        return None
    noise = rng.normal(0.0, sigma_n, size=samples).mean() if sigma_n > 0 else 0.0
    depth = max(float(scenario.depths[cell]) + float(noise), 1e-3)
    return Measurement(v.position, depth, time, agent_id, samples)


# -- messaging -----------------------------------------------------------------

@dataclass(frozen=True)
class BusMessage:
    sender: int
    kind: str
    payload: bytes
    send_time: float


@dataclass(frozen=True)
class CommConfig:
    comm_range: float = math.inf
    dropout: float = 0.0


def realize_graph(cfg: CommConfig, rng: np.random.Generator, positions: Sequence) -> CommGraph:
    """Edge iff within range and the per-edge dropout coin passes."""
    n = len(positions)
    g = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(i + 1, n):
            in_range = math.dist(positions[i], positions[j]) <= cfg.comm_range
            coin = rng.random() if cfg.dropout > 0 else 1.0
            if in_range and coin >= cfg.dropout:
                g[i, j] = g[j, i] = 1
    return CommGraph(g)


def deliver_messages(bus: Sequence[BusMessage], cfg: CommConfig, rng: np.random.Generator,
                     positions: Sequence) -> tuple[list[list[BusMessage]], CommGraph]:
    """Per-agent inboxes (sender excluded) and the graph the messages travelled over."""
    g = realize_graph(cfg, rng, positions)
    inboxes: list[list[BusMessage]] = [[] for _ in positions]
    for msg in bus:
        for j in np.flatnonzero(g.adjacency[msg.sender]):
            inboxes[j].append(msg)
    return inboxes, g


# -- mission record ----------------------------------------------------------

@dataclass
class MissionRecord:
    scenario: str
    planner: str
    n_vehicles: int
    seed: int
    duration_s: float
    found: bool
    timeout: bool
    final_path: list = field(default_factory=list)
    time_on_path_ratio: float = 0.0
    trajectories: list = field(default_factory=list)
    consensus_events: int = 0
    trial: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "MissionRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


# -- the mission loop ----------------------------------------------------------

@dataclass
class _Agent:
    vehicle: VehicleState
    cache: GprCache
    pending: list = field(default_factory=list)
    visit_cell: int | None = None
    visit_sum: float = 0.0
    visit_count: int = 0
    visit_time: float = 0.0
    belief: BeliefMap | None = None
    pbacs: PbacsAgent | None = None
    mdp: MyopicPlanner | None = None
    mdp_state: MdpState | None = None
    trajectory: list = field(default_factory=list)
    last_cell: int | None = None


def _start_agents(scenario: BathyScenario, planner: str, n: int, cfg: MissionConfig) -> list[_Agent]:
    gcfg = replace(cfg.gpr, seed=int(substream(cfg.sim.seed, "subset").integers(2 ** 31)))
    centers = scenario.centers
    agents = []
    if planner == "pbacs":
        for i, tr in enumerate(sweep_assignment(n, scenario)):
            cells = tr.cells if i % 2 == 0 else tr.cells[::-1]
            wps = (tuple(centers[cells[-1]]),)
            v = VehicleState(tuple(centers[cells[0]]), 0.0, cfg.sim.speed, "sweep", wps)
            a = _Agent(v, GprCache.empty(scenario, gcfg, cfg.kernel))
            a.pbacs = PbacsAgent(i, scenario, cfg.pbacs)
            agents.append(a)
    elif planner == "lawnmower":
        plan = generate_lawnmower(scenario, n, cfg.lawnmower_spacing)
        for w in plan.waypoints:
            wps = tuple(tuple(p) for p in w)
            agents.append(_Agent(VehicleState(wps[0], 0.0, cfg.sim.speed, "lawnmower", wps[1:]),
                                 GprCache.empty(scenario, gcfg, cfg.kernel)))
    elif planner in ("ucb", "mvi"):
        start_row = min(c // scenario.cols for c in scenario.start_cells)
        south = heading_index("S") if start_row == 0 else heading_index("N")
        for i in range(n):
            col = int(round((i + 0.5) * scenario.cols / n - 0.5))
            cell = start_row * scenario.cols + col
            v = VehicleState(tuple(centers[cell]), 0.0, cfg.sim.speed, "mdp", ())
            a = _Agent(v, GprCache.empty(scenario, gcfg, cfg.kernel))
            a.mdp_state = MdpState(cell, south)
            agents.append(a)
    else:
        raise ValueError(f"unknown planner {planner!r}; expected one of {PLANNERS}")
    return agents


class Mission:
    """One mission; :meth:`run` advances it to channel-found or timeout."""

    def __init__(self, scenario: BathyScenario, planner: str, n: int, cfg: MissionConfig = MissionConfig()):
        if n < 1:
            raise ValueError("need at least one vehicle")
        self.scenario, self.planner, self.n, self.cfg = scenario, planner, n, cfg
        self.locator = _Locator(scenario)
        self.centers = scenario.centers
        self.rng = {name: substream(cfg.sim.seed, name) for name in STREAMS}
        self.comm = CommConfig(cfg.sim.comm_range, cfg.sim.dropout)
        self.agents = _start_agents(scenario, planner, n, cfg)
        kmat = kernel_matrix(self.centers, self.centers, cfg.kernel)
        self.fusion = BeliefFusion(kmat, cfg.consensus, scenario.rows, scenario.cols)
        reward = planner.upper() if planner in ("ucb", "mvi") else cfg.fallback_reward
        self.mdp_cfg = replace(cfg.mdp, reward=reward)
        for a in self.agents:
            a.belief = a.cache.belief
            if planner in ("ucb", "mvi"):
                self._init_mdp(a)
        self.occupancy = np.zeros((n, scenario.n_cells))
        self.bus: list[BusMessage] = []
        self.time = 0.0
        self.epoch = 0
        self.result: CandidatePath | None = None

    # -- per-tick pieces
    def _init_mdp(self, a: _Agent) -> None:
        if a.mdp is None:
            a.mdp = MyopicPlanner(self.scenario.rows, self.scenario.cols, self.mdp_cfg)
            self._set_mdp_reward(a)

    def _set_mdp_reward(self, a: _Agent) -> None:
        maxima = None
        if self.mdp_cfg.reward == "MVI":
            maxima = sample_maxima(a.belief, self.mdp_cfg.mvi_samples, self.rng["maxima"])
        a.mdp.set_reward(reward_field(a.belief, self.mdp_cfg, maxima))

    def _mdp_advance(self, a: _Agent) -> None:
        """Pick the next cell when the vehicle has entered its target cell (or has none)."""
        cell = self.locator.cell(a.vehicle.position)
        if a.mdp_state is None:
            a.mdp_state = MdpState(cell, self._heading_of(a.vehicle))
        elif a.vehicle.waypoints and cell != a.mdp_state.cell:
            return
        intended = a.mdp.plan(a.mdp_state)
        acts = available_actions(a.mdp_state, self.scenario.rows, self.scenario.cols)
        dist = transition(a.mdp_state, intended, self.scenario.rows, self.scenario.cols,
                          self.mdp_cfg.p_success, acts)
        u = self.rng["transition"].random()
        acc = 0.0
        nxt = dist[-1][0]
        for target, p in dist:
            acc += p
            if u < acc:
                nxt = target
                break
        a.mdp_state = nxt
        a.vehicle = replace(a.vehicle, waypoints=(tuple(self.centers[nxt.cell]),))

    def _heading_of(self, v: VehicleState) -> int:
        # nearest of the 8 grid headings to the vehicle's world heading
        dx, dy = math.cos(v.heading), math.sin(v.heading)
        a = math.radians(self.scenario.rotation)
        gx = math.cos(a) * dx + math.sin(a) * dy
        gy = -math.sin(a) * dx + math.cos(a) * dy
        angle = math.atan2(gx, -gy)  # clockwise from north (row decreasing)
        return int(round(angle / (math.pi / 4))) % 8

    def _sense(self, i: int, a: _Agent) -> None:
        cell = self.locator.cell(a.vehicle.position)
        if cell is None:
            return
        k = self.cfg.sim.samples_per_tick
        sigma = self.cfg.sim.sigma_n
        noise = self.rng["sensor"].normal(0.0, sigma, size=k).sum() if sigma > 0 else 0.0
        reading_sum = k * float(self.scenario.depths[cell]) + float(noise)
        if cell != a.visit_cell:
            self._flush_visit(i, a)
            a.visit_cell, a.visit_time = cell, self.time
        a.visit_sum += reading_sum
        a.visit_count += k
        self.occupancy[i, cell] += self.cfg.sim.dt
        if cell != a.last_cell:
            a.trajectory.append([round(self.time, 6), cell])
            a.last_cell = cell

    def _flush_visit(self, i: int, a: _Agent) -> None:
        if a.visit_count:
            depth = max(a.visit_sum / a.visit_count, 1e-3)
            a.pending.append(Measurement(tuple(self.centers[a.visit_cell]), depth, a.visit_time, i, a.visit_count))
        a.visit_cell, a.visit_sum, a.visit_count = None, 0.0, 0

    def _consensus(self) -> None:
        self.epoch += 1
        for i, a in enumerate(self.agents):
            self._flush_visit(i, a)
            a.cache = incremental_update(a.cache, a.pending)
            a.pending = []
        positions = [a.vehicle.position for a in self.agents]
        g = realize_graph(self.comm, self.rng["dropout"], positions)
        fused, _ = self.fusion.fuse([a.cache.belief for a in self.agents], g)
        for a, b in zip(self.agents, fused):
            a.belief = b
        for a in self.agents:
            path = check_channel_found(a.belief, self.cfg.pbacs, self.scenario)
            if path is not None:
                self.result = path
                return
        for a in self.agents:
            if a.mdp is not None:
                self._set_mdp_reward(a)

    def _pbacs_tick(self, consensus: bool, inboxes) -> None:
        for i, a in enumerate(self.agents):
            props = [Proposal.from_dict(json.loads(m.payload)) for m in inboxes[i] if m.kind == "proposal"]
            ev = PbacsEvents(self.time, np.asarray(a.vehicle.position), a.belief if consensus else None,
                             props, not a.vehicle.waypoints, self.epoch)
            out = a.pbacs.step(ev)
            for p in out.proposals:
                payload = json.dumps(p.to_dict(), sort_keys=True).encode()
                self.bus.append(BusMessage(i, "proposal", payload, self.time))
            if out.waypoints is not None:
                a.vehicle = replace(a.vehicle, waypoints=tuple(tuple(self.centers[c]) for c in out.waypoints))
                a.mdp_state = None
            mode = a.pbacs.mode
            if mode == FALLBACK:
                if a.mdp is None:
                    self._init_mdp(a)
                elif consensus:
                    self._set_mdp_reward(a)
                if a.vehicle.mode != FALLBACK:
                    a.mdp_state = None
                    a.vehicle = replace(a.vehicle, waypoints=())
                self._mdp_advance(a)
            a.vehicle = replace(a.vehicle, mode=mode if mode != DONE else "done")

    def run(self) -> MissionRecord:
        sim = self.cfg.sim
        ticks_per_consensus = sim.consensus_period / sim.dt
        max_ticks = int(math.ceil(sim.timeout / sim.dt - 1e-9))
        consensus_count = 0
        for k in range(1, max_ticks + 1):
            self.time = k * sim.dt
            for i, a in enumerate(self.agents):
                a.vehicle = step_vehicle(a.vehicle, sim.dt, sim.arrival_radius)
                self._sense(i, a)
            inboxes = [[] for _ in self.agents]
            if self.bus:
                inboxes, _ = deliver_messages(self.bus, self.comm, self.rng["dropout"],
                                              [a.vehicle.position for a in self.agents])
                self.bus = []
            consensus = abs(k / ticks_per_consensus - round(k / ticks_per_consensus)) < 1e-9
            if consensus:
                consensus_count += 1
                self._consensus()
                if self.result is not None:
                    return self._record(self.time, True, consensus_count)
            if self.planner == "pbacs":
                self._pbacs_tick(consensus, inboxes)
            elif self.planner in ("ucb", "mvi"):
                for a in self.agents:
                    self._mdp_advance(a)
        return self._record(sim.timeout, False, consensus_count)

    def _record(self, duration: float, found: bool, consensus_count: int) -> MissionRecord:
        path = list(self.result.waypoints) if found else []
        ratio = 0.0
        total = float(self.occupancy.sum())
        if found and total > 0:
            mask = np.zeros((self.scenario.rows, self.scenario.cols), dtype=bool)
            mask.flat[path] = True
            near = binary_dilation(mask, structure=np.ones((3, 3), dtype=bool)).ravel()
            ratio = float(self.occupancy[:, near].sum() / total)
        return MissionRecord(
            scenario=self.scenario.name,
            planner=self.planner,
            n_vehicles=self.n,
            seed=self.cfg.sim.seed,
            duration_s=float(duration),
            found=found,
            timeout=not found,
            final_path=[int(c) for c in path],
            time_on_path_ratio=ratio,
            trajectories=[a.trajectory for a in self.agents],
            consensus_events=consensus_count,
        )


def run_mission(scenario: BathyScenario, planner: str, n: int, cfg: MissionConfig = MissionConfig()) -> MissionRecord:
    return Mission(scenario, planner, n, cfg).run()
