"""Monte Carlo experiment runner, aggregation and report writing.

Results are JSON lines, one MissionRecord per line, appended as missions
finish so an interrupted batch resumes where it stopped.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .consensus import ConsensusConfig
from .gpr import KernelConfig
from .lawnmower import generate_lawnmower
from .scenario import BathyScenario, generate_suite
from .simkernel import PLANNERS, MissionConfig, MissionRecord, run_mission

log = logging.getLogger(__name__)

SEED_MASK = (1 << 63) - 1


class ReportError(OSError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    scenarios: tuple[BathyScenario, ...]
    planners: tuple[str, ...] = PLANNERS
    vehicle_counts: tuple[int, ...] = (1, 2, 3, 4)
    trials: int = 5
    # per-planner trial counts overriding ``trials`` (e.g. one deterministic lawnmower run per cell)
    trials_per_planner: tuple[tuple[str, int], ...] = ()
    base_seed: int = 0
    depth_threshold: float = 20.0
    config: MissionConfig = MissionConfig()

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "planners", tuple(self.planners))
        object.__setattr__(self, "vehicle_counts", tuple(int(n) for n in self.vehicle_counts))
        object.__setattr__(self, "trials_per_planner", tuple(dict(self.trials_per_planner).items()))
        if not self.scenarios:
            raise ValueError("spec needs at least one scenario")
        if self.trials < 1 or any(t < 1 for _, t in self.trials_per_planner):
            raise ValueError("trials must be >= 1")
        for p in self.planners:
            if p not in PLANNERS:
                raise ValueError(f"unknown planner {p!r}")
        if any(not 1 <= n for n in self.vehicle_counts):
            raise ValueError("vehicle counts must be >= 1")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ValueError("scenario names must be unique")
        for s in self.scenarios:
            if not s.depths.min() <= self.depth_threshold <= s.depths.max():
                raise ValueError(f"depth threshold {self.depth_threshold} ft outside the depth range of {s.name}")

    def trials_for(self, planner: str) -> int:
        return dict(self.trials_per_planner).get(planner, self.trials)

    def cells(self) -> list[tuple[str, str, int, int]]:
        return [
            (s.name, p, n, t)
            for s in self.scenarios
            for p in self.planners
            for n in self.vehicle_counts
            for t in range(self.trials_for(p))
        ]


def benchmark_config() -> MissionConfig:
    """Configuration used for experiment batches.

    Squared-exponential kernel: with l = 28.8 ft the printed unsquared form
    correlates cells hundreds of meters apart, and consensus over such
    covariances marks interpolated (never measured) cells as confirmed.
    Under the squared-exponential form the cell covariance is nearly
    diagonal, so tiled consensus matches the full one closely at a fraction
    of the cost.
    """
    return MissionConfig(kernel=KernelConfig(form="squared-exponential"),
                         consensus=ConsensusConfig(full_max_cells=0, tile_cells=256))


def acceptance_specs(base_seed: int = 0, config: MissionConfig | None = None) -> list[ExperimentSpec]:
    """Mission matrix behind the qualitative reproduction checks.

    Eight generated scenarios (four shapes and their mirrors), five trials per
    cell: PBACS with 2-4 vehicles, UCB/MVI with 1, 3 and 4, lawnmower with 3 and 4.
    """
    cfg = config or benchmark_config()
    suite = tuple(generate_suite("acceptance", seed=base_seed))
    return [
        ExperimentSpec(suite, ("pbacs",), (2, 3, 4), 5, base_seed=base_seed, config=cfg),
        ExperimentSpec(suite, ("ucb", "mvi"), (1, 3, 4), 5, base_seed=base_seed, config=cfg),
        ExperimentSpec(suite, ("lawnmower",), (3, 4), 5, base_seed=base_seed, config=cfg),
    ]


def paper_spec(scenarios: Sequence[BathyScenario], base_seed: int = 0,
               config: MissionConfig = MissionConfig()) -> ExperimentSpec:
    """One lawnmower and five PBACS/UCB/MVI missions per scenario and vehicle count 1..4."""
    return ExperimentSpec(tuple(scenarios), PLANNERS, (1, 2, 3, 4), 5, (("lawnmower", 1),), base_seed, 20.0, config)


def cell_seed(base_seed: int, cell: tuple[str, str, int, int]) -> int:
    digest = hashlib.blake2b("|".join(map(str, cell)).encode(), digest_size=8).digest()
    return (base_seed ^ int.from_bytes(digest, "little")) & SEED_MASK


def record_key(d: dict) -> tuple[str, str, int, int]:
    return d["scenario"], d["planner"], int(d["n_vehicles"]), int(d.get("trial", 0))


def load_records(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open() as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                # a torn final line from an interrupted run is re-executed
                log.warning("%s:%d: skipping unparsable record", path, lineno)
    return out


def _run_cell(args) -> dict:
    scenario, cell, seed, cfg = args
    try:
        rec = run_mission(scenario, cell[1], cell[2], cfg.with_overrides(seed=seed))
    except Exception as exc:  # recorded, never aborts the batch
        log.exception("mission %s failed", cell)
        rec = MissionRecord(cell[0], cell[1], cell[2], seed, 0.0, False, False, error=f"{type(exc).__name__}: {exc}")
    rec.trial = cell[3]
    return rec.to_dict()


def run_experiment(spec: ExperimentSpec, out_path: str | Path | None = None, workers: int = 1,
                   keep_trajectories: bool = True) -> list[dict]:
    """Run every spec cell not already present in ``out_path``; returns all records of the spec."""
    cells = spec.cells()
    seeds = {c: cell_seed(spec.base_seed, c) for c in cells}
    if len(set(seeds.values())) != len(seeds):
        raise ValueError("seed collision between experiment cells")
    by_name = {s.name: s for s in spec.scenarios}
    cfg = spec.config.with_overrides(depth_threshold=spec.depth_threshold)
    done = {record_key(r): r for r in load_records(out_path)} if out_path else {}
    todo = [c for c in cells if c not in done]
    log.info("%d cells, %d already done", len(cells), len(cells) - len(todo))
    jobs = [(by_name[c[0]], c, seeds[c], cfg) for c in todo]
    sink = Path(out_path).open("a") if out_path else None
    if sink and sink.tell() > 0 and not Path(out_path).read_bytes().endswith(b"\n"):
        sink.write("\n")  # terminate a torn line so the next record starts cleanly
    try:
        results = map(_run_cell, jobs) if workers <= 1 else ProcessPoolExecutor(workers).map(_run_cell, jobs)
        for rec in results:
            if not keep_trajectories:
                rec["trajectories"] = []
            done[record_key(rec)] = rec
            if sink:
                # single writer: records are appended by this process only
                sink.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return [done[c] for c in cells]


# -- aggregation ---------------------------------------------------------------

@dataclass
class Summary:
    durations: list = field(default_factory=list)  # rows: planner, n, mean_s, min_s, max_s, count
    timeouts: list = field(default_factory=list)   # rows: planner, n, timeouts, total, fraction
    ratios: list = field(default_factory=list)     # rows: planner, n, sorted ratios of found missions
    errors: int = 0

    def to_dict(self) -> dict:
        return {"durations": self.durations, "timeouts": self.timeouts, "ratios": self.ratios, "errors": self.errors}

    @classmethod
    def from_dict(cls, d: dict) -> "Summary":
        return cls(d["durations"], d["timeouts"], d["ratios"], d.get("errors", 0))

    def duration(self, planner: str, n: int) -> dict | None:
        return next((r for r in self.durations if (r["planner"], r["n"]) == (planner, n)), None)

    def timeout_fraction(self, planner: str, n: int) -> float | None:
        row = next((r for r in self.timeouts if (r["planner"], r["n"]) == (planner, n)), None)
        return None if row is None else row["fraction"]


def _as_dict(r) -> dict:
    return r if isinstance(r, dict) else r.to_dict()


def aggregate(records: Iterable) -> Summary:
    """Duration stats over non-timed-out missions; timeout fractions over all missions."""
    recs = [_as_dict(r) for r in records]
    groups: dict[tuple[str, int], list[dict]] = {}
    errors = 0
    for r in recs:
        if r.get("error"):
            errors += 1
            continue
        groups.setdefault((r["planner"], int(r["n_vehicles"])), []).append(r)
    summary = Summary(errors=errors)
    for (planner, n) in sorted(groups):
        rs = groups[(planner, n)]
        ok = sorted(float(r["duration_s"]) for r in rs if not r["timeout"])
        if ok:
            mean = Fraction(sum(Fraction(d) for d in ok), len(ok))
            summary.durations.append({"planner": planner, "n": n, "mean_s": float(mean), "min_s": ok[0],
                                      "max_s": ok[-1], "count": len(ok)})
        t = sum(1 for r in rs if r["timeout"])
        summary.timeouts.append({"planner": planner, "n": n, "timeouts": t, "total": len(rs),
                                 "fraction": float(Fraction(t, len(rs)))})
        ratios = sorted(float(r["time_on_path_ratio"]) for r in rs if r["found"])
        summary.ratios.append({"planner": planner, "n": n, "ratios": ratios})
    return summary


def median_ratio(summary: Summary, planner: str, n: int) -> float | None:
    row = next((r for r in summary.ratios if (r["planner"], r["n"]) == (planner, n)), None)
    return statistics.median(row["ratios"]) if row and row["ratios"] else None


def full_coverage_times(scenario: BathyScenario, counts: Sequence[int], cfg: MissionConfig = MissionConfig()) -> dict:
    """Lawnmower full-coverage time per vehicle count, rounded up to the next consensus event."""
    out = {}
    for n in counts:
        longest = max(generate_lawnmower(scenario, n, cfg.lawnmower_spacing).path_lengths())
        t = longest / cfg.sim.speed
        out[n] = math.ceil(t / cfg.sim.consensus_period) * cfg.sim.consensus_period
    return out


def _write(path: Path, writer) -> None:
    try:
        with path.open("w", newline="") as f:
            writer(f)
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror or exc}") from exc


def report(summary: Summary, out_dir: str | Path, coverage: dict | None = None) -> list[Path]:
    """Write durations.csv, timeouts.csv, summary.json and plot-ready series.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"{out}: {exc.strerror or exc}") from exc

    def table(header, rows):
        def w(f):
            wr = csv.writer(f)
            wr.writerow(header)
            for r in rows:
                wr.writerow([r[h] for h in header])
        return w

    paths = [out / "durations.csv", out / "timeouts.csv", out / "summary.json", out / "series.json"]
    _write(paths[0], table(["planner", "n", "mean_s", "min_s", "max_s", "count"], summary.durations))
    _write(paths[1], table(["planner", "n", "timeouts", "total", "fraction"], summary.timeouts))
    _write(paths[2], lambda f: json.dump(summary.to_dict(), f, indent=1, sort_keys=True))
    series = {"duration_vs_n": {}, "ratio_box": {}}
    for r in summary.durations:
        series["duration_vs_n"].setdefault(r["planner"], []).append([r["n"], r["mean_s"], r["min_s"], r["max_s"]])
    for r in summary.ratios:
        if r["ratios"]:
            q = statistics.quantiles(r["ratios"], n=4, method="inclusive") if len(r["ratios"]) > 1 else [r["ratios"][0]] * 3
            series["ratio_box"].setdefault(r["planner"], []).append(
                {"n": r["n"], "min": r["ratios"][0], "q1": q[0], "median": q[1], "q3": q[2], "max": r["ratios"][-1]})
    if coverage:
        series["full_coverage_lawnmower"] = [[int(n), float(t)] for n, t in sorted(coverage.items())]
    _write(paths[3], lambda f: json.dump(series, f, indent=1, sort_keys=True))
    return paths
