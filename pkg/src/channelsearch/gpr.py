"""Per-agent Gaussian process regression of depth over grid cells.

Fast GPR: the measurement set is split into ``k`` subsets of at most ``N_s``
points, a standard GP posterior is computed on each, and the experts are
combined per cell by precision weighting.  The combined variance is the
harmonic mean of the expert variances, so cells no expert knows about keep the
prior variance and no cell ever exceeds it.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack
from scipy.spatial.distance import cdist

from .scenario import BathyScenario

log = logging.getLogger(__name__)

FEET_TO_METERS = 0.3048
KERNEL_FORMS = ("paper-literal", "squared-exponential")
VARIANCE_FLOOR = 1e-12
# kernel-matrix entries below this are set to zero; left in, their products
# become subnormal floats, which slow the BLAS kernels down several-fold
KERNEL_CUTOFF = 1e-150


class GprError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    length_scale_ft: float = 28.8
    form: str = "paper-literal"

    def __post_init__(self):
        if not self.length_scale_ft > 0:
            raise ValueError("length_scale_ft must be > 0")
        if self.form not in KERNEL_FORMS:
            raise ValueError(f"kernel form must be one of {KERNEL_FORMS}")

    @property
    def length_scale_m(self) -> float:
        return self.length_scale_ft * FEET_TO_METERS


def kernel(x_i, x_j, cfg: KernelConfig = KernelConfig()) -> float:
    d = math.dist(tuple(x_i), tuple(x_j))
    return float(_kernel_from_distance(np.asarray(d), cfg))


def kernel_matrix(a, b, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    k = _kernel_from_distance(cdist(a, b), cfg)
    k[k < KERNEL_CUTOFF] = 0.0
    return k


def _kernel_from_distance(d: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    l2 = 2.0 * cfg.length_scale_m ** 2
    if cfg.form == "paper-literal":
        # exp(-d / 2l^2): the printed form, with an unsquared distance
        return np.exp(-d / l2)
    return np.exp(-(d * d) / l2)


@dataclass(frozen=True)
class Measurement:
    position: tuple[float, float]
    depth: float
    time: float
    agent_id: int
    # raw samples averaged into this value; noise variance scales as 1/count
    count: int = 1
    _key: bytes = field(default=b"", init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if not self.depth > 0:
            raise ValueError(f"measurement depth must be > 0, got {self.depth}")
        if self.time < 0:
            raise ValueError("measurement time must be >= 0")
        if self.count < 1:
            raise ValueError("measurement count must be >= 1")
        object.__setattr__(self, "_key", struct.pack("<4dqq", *self.position, self.depth, self.time,
                                                      self.agent_id, self.count))

    def key(self) -> bytes:
        return self._key


@dataclass
class BeliefMap:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise ValueError("mean and variance must be 1-D vectors of equal length")
        if np.any(self.variance < 0):
            raise ValueError("variance must be non-negative")

    @classmethod
    def prior(cls, n_cells: int, cfg: "FastGprConfig") -> "BeliefMap":
        return cls(np.full(n_cells, cfg.prior_mean), np.full(n_cells, cfg.prior_variance))

    def __len__(self):
        return self.mean.size

    def copy(self) -> "BeliefMap":
        return BeliefMap(self.mean.copy(), self.variance.copy())


@dataclass(frozen=True)
class FastGprConfig:
    subset_count: int = 8
    subset_size: int = 160
    prior_mean: float = 16.0
    prior_variance: float = 25.0
    noise_variance: float = 0.04
    jitter: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.subset_count < 1 or self.subset_size < 1:
            raise ValueError("subset_count and subset_size must be >= 1")
        if self.prior_variance <= 0 or self.noise_variance < 0:
            raise ValueError("prior_variance must be > 0 and noise_variance >= 0")


def _grid_points(grid) -> np.ndarray:
    if isinstance(grid, BathyScenario):
        return grid.centers
    return np.atleast_2d(np.asarray(grid, dtype=float))


@lru_cache(maxsize=1 << 18)
def _digest_key(key: bytes, seed: int) -> bytes:
    return hashlib.blake2b(key, digest_size=8, key=struct.pack("<q", seed)).digest()


def _digest(m: Measurement, seed: int) -> bytes:
    return _digest_key(m.key(), seed)


def select_subsets(measurements: Sequence[Measurement], cfg: FastGprConfig) -> list[tuple[int, ...]]:
    """Index tuples of the ``k`` subsets.

    Measurements are shuffled by a keyed hash of their content (so the result
    does not depend on list order), then dealt out as ``k`` blocks of
    ``min(N_s, N)`` consecutive items, wrapping around the shuffled sequence.
    """
    n = len(measurements)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (_digest(measurements[i], cfg.seed), measurements[i].key()))
    size = min(cfg.subset_size, n)
    if size == n:
        return [tuple(order)] * cfg.subset_count
    stride = math.ceil(n / cfg.subset_count)
    if cfg.subset_count * size < n:
        log.debug("fast GPR uses %d of %d measurements", cfg.subset_count * size, n)
    return [
        tuple(order[(j * stride + t) % n] for t in range(size))
        for j in range(cfg.subset_count)
    ]


def _expert(points: np.ndarray, ms: Sequence[Measurement], cfg: FastGprConfig,
            kcfg: KernelConfig, rows: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Standard GP posterior at ``points`` from one subset.

    ``rows`` memoizes prior covariance rows ``s2 K(x, points)`` by position.
    """
    x = np.array([m.position for m in ms])
    y = np.array([m.depth for m in ms]) - cfg.prior_mean
    noise = np.array([cfg.noise_variance / m.count for m in ms])
    gram = cfg.prior_variance * kernel_matrix(x, x, kcfg)
    gram[np.diag_indices_from(gram)] += noise + cfg.jitter
    jitter = max(cfg.jitter, 1e-9)
    for _ in range(8):
        try:
            factor = cho_factor(gram, lower=True, check_finite=False)
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
            gram[np.diag_indices_from(gram)] += jitter
    else:
        raise GprError("subset Gram matrix is not positive definite even after jitter")
    if rows is None:
        cross = cfg.prior_variance * kernel_matrix(x, points, kcfg)
    else:
        cross = np.empty((len(ms), len(points)))
        for i, m in enumerate(ms):
            row = rows.get(m.position)
            if row is None:
                row = rows[m.position] = cfg.prior_variance * kernel_matrix(x[i], points, kcfg)[0]
            cross[i] = row
    mean = cfg.prior_mean + cross.T @ cho_solve(factor, y, check_finite=False)
    l_inv, info = lapack.dtrtri(np.tril(factor[0]), lower=1)
    if info != 0:
        raise GprError("triangular inverse failed")
    v = l_inv @ cross
    var = np.maximum(cfg.prior_variance - np.einsum("ij,ij->j", v, v), VARIANCE_FLOOR)
    return mean, var


def combine_experts(experts: Sequence[tuple[np.ndarray, np.ndarray]]) -> BeliefMap:
    precision = np.zeros_like(experts[0][1])
    weighted = np.zeros_like(experts[0][0])
    for mean, var in experts:
        w = 1.0 / var
        precision += w
        weighted += w * mean
    return BeliefMap(weighted / precision, len(experts) / precision)


def fit_predict(measurements: Sequence[Measurement], grid, cfg: FastGprConfig = FastGprConfig(),
                kcfg: KernelConfig = KernelConfig()) -> BeliefMap:
    """Fast-GPR posterior mean/variance at every cell center of ``grid``."""
    points = _grid_points(grid)
    if not measurements:
        return BeliefMap.prior(len(points), cfg)
    experts = {}
    combined = []
    for subset in select_subsets(measurements, cfg):
        if subset not in experts:
            experts[subset] = _expert(points, [measurements[i] for i in subset], cfg, kcfg)
        combined.append(experts[subset])
    return combine_experts(combined)


@dataclass
class GprCache:
    """Running state for incremental fits.

    Expert posteriors are memoized by subset content, so a subset that is
    unchanged by new data is never refactored.
    """

    points: np.ndarray
    cfg: FastGprConfig = FastGprConfig()
    kcfg: KernelConfig = KernelConfig()
    measurements: tuple[Measurement, ...] = ()
    experts: dict = field(default_factory=dict)
    belief: BeliefMap | None = None
    # prior covariance rows between measurement positions and the grid
    rows: dict = field(default_factory=dict, repr=False)

    @classmethod
    def empty(cls, grid, cfg: FastGprConfig = FastGprConfig(), kcfg: KernelConfig = KernelConfig()):
        points = _grid_points(grid)
        return cls(points, cfg, kcfg, (), {}, BeliefMap.prior(len(points), cfg))


def incremental_update(cache: GprCache, batch: Iterable[Measurement]) -> GprCache:
    batch = tuple(batch)
    if not batch:
        return cache
    known = {m.key() for m in cache.measurements}
    if set(cache.experts) - {_expert_key(s, cache.measurements) for s in
                             select_subsets(cache.measurements, cache.cfg)}:
        raise GprError("cache experts do not match the ingested measurements")
    data = cache.measurements + batch
    experts = {}
    combined = []
    for subset in select_subsets(data, cache.cfg):
        key = _expert_key(subset, data)
        if key not in experts:
            experts[key] = cache.experts.get(key) or _expert(
                cache.points, [data[i] for i in subset], cache.cfg, cache.kcfg, cache.rows)
        combined.append(experts[key])
    log.debug("incremental GPR: %d new, %d known, %d experts", len(batch), len(known), len(experts))
    return GprCache(cache.points, cache.cfg, cache.kcfg, data, experts, combine_experts(combined), cache.rows)


def _expert_key(subset: tuple[int, ...], data: Sequence[Measurement]) -> tuple[bytes, ...]:
    return tuple(data[i].key() for i in subset)
