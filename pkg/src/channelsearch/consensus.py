"""Modified decentralized Kalman consensus over a communication graph.

One round, for agent i with neighbors j (``g[i, j] == 1``)::

    P_i <- [ (P_i + Q)^-1 + sum_j g_ij (mu_j P_j)^-1 ]^-1
    z_i <- z_i + P_i_new sum_j g_ij (mu_j P_j)^-1 (z_j - z_i)
    mu_j = number of neighbors of j

Q is applied only to agents with no neighbors, which then keep their mean.
States are kept in information form (``P^-1``) between rounds so a round costs
one Cholesky factorization per connected agent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack
from scipy.sparse.csgraph import connected_components

from .gpr import BeliefMap

SPD_JITTER = 1e-9


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.adjacency, dtype=np.int8)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any((g != 0) & (g != 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(g)):
            raise ValueError("adjacency diagonal must be zero")
        if not np.array_equal(g, g.T):
            raise ValueError("adjacency must be symmetric")
        g.setflags(write=False)
        object.__setattr__(self, "adjacency", g)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def components(self) -> np.ndarray:
        return connected_components(self.adjacency, directed=False)[1]

    @classmethod
    def complete(cls, n: int) -> "CommGraph":
        return cls(np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8))

    @classmethod
    def empty(cls, n: int) -> "CommGraph":
        return cls(np.zeros((n, n), dtype=np.int8))

    @classmethod
    def line(cls, n: int) -> "CommGraph":
        g = np.zeros((n, n), dtype=np.int8)
        for i in range(n - 1):
            g[i, i + 1] = g[i + 1, i] = 1
        return cls(g)

    @classmethod
    def from_edges(cls, n: int, edges) -> "CommGraph":
        g = np.zeros((n, n), dtype=np.int8)
        for i, j in edges:
            g[i, j] = g[j, i] = 1
        return cls(g)


def degree_factor(g: CommGraph, j: int) -> int:
    return int(sum(g.adjacency[k, j] for k in range(g.n) if k != j))


def _spd_factor(a: np.ndarray):
    jitter = SPD_JITTER
    for _ in range(12):
        try:
            return cho_factor(a, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            a = a + jitter * np.eye(a.shape[0])
            jitter *= 10.0
    raise np.linalg.LinAlgError("matrix is not positive definite even after jitter")


def _spd_inverse(a: np.ndarray) -> np.ndarray:
    inv = cho_solve(_spd_factor(a), np.eye(a.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def _inverse_diagonal(factor) -> np.ndarray:
    lower, _ = factor
    l_inv, info = lapack.dtrtri(np.tril(lower), lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("triangular inverse failed")
    return np.einsum("ij,ij->j", l_inv, l_inv)


class ConsensusState:
    """One agent's mean, covariance and process noise.

    Either the covariance or its inverse may be stored; the other is computed
    on first use.
    """

    def __init__(self, mean, cov=None, info=None, process_noise=0.0, info_factor=None):
        if cov is None and info is None:
            raise ValueError("need a covariance or an information matrix")
        self.mean = np.asarray(mean, dtype=float)
        self._cov = cov
        self._info = info
        self._factor = info_factor
        self.process_noise = process_noise

    @classmethod
    def from_belief(cls, belief: BeliefMap, kernel_mat: np.ndarray, kernel_inv: np.ndarray | None = None,
                    process_noise: float = 0.0) -> "ConsensusState":
        """P[a, b] = K(x_a, x_b) sqrt(var_a var_b), so diag(P) equals the belief variance."""
        sd = np.sqrt(np.maximum(belief.variance, 1e-12))
        cov = kernel_mat * np.outer(sd, sd)
        info = kernel_inv / np.outer(sd, sd) if kernel_inv is not None else None
        return cls(belief.mean.copy(), cov=cov, info=info, process_noise=process_noise)

    @property
    def cov(self) -> np.ndarray:
        if self._cov is None:
            self._cov = _spd_inverse(self._info)
        return self._cov

    @property
    def info(self) -> np.ndarray:
        if self._info is None:
            self._info = _spd_inverse(self._cov)
        return self._info

    @property
    def variance(self) -> np.ndarray:
        if self._cov is not None:
            return np.diag(self._cov).copy()
        if self._factor is None:
            self._factor = _spd_factor(self._info)
        return _inverse_diagonal(self._factor)

    def noise_matrix(self) -> np.ndarray:
        q = self.process_noise
        if np.isscalar(q):
            return q * np.eye(self.mean.size)
        return np.asarray(q)

    def to_belief(self) -> BeliefMap:
        return BeliefMap(self.mean.copy(), np.maximum(self.variance, 0.0))


def consensus_round(states: Sequence[ConsensusState], g: CommGraph) -> list[ConsensusState]:
    """Synchronous round: every update reads only the round-t states."""
    if len(states) != g.n:
        raise ValueError("one state per graph node required")
    mu = g.adjacency.sum(axis=0)
    scaled_info = {}
    out = []
    for i, s in enumerate(states):
        nbrs = g.neighbors(i)
        if nbrs.size == 0:
            q = s.process_noise
            cov = s.cov + (q * np.eye(s.mean.size) if np.isscalar(q) else q)
            out.append(ConsensusState(s.mean.copy(), cov=cov, process_noise=q))
            continue
        info = s.info.copy()
        rhs = np.zeros_like(s.mean)
        for j in nbrs:
            if j not in scaled_info:
                scaled_info[j] = states[j].info / mu[j]
            info += scaled_info[j]
            rhs += scaled_info[j] @ (states[j].mean - s.mean)
        info = 0.5 * (info + info.T)
        factor = _spd_factor(info)
        mean = s.mean + cho_solve(factor, rhs, check_finite=False)
        out.append(ConsensusState(mean, info=info, process_noise=s.process_noise, info_factor=factor))
    return out


@dataclass
class ConsensusResult:
    states: list
    rounds: int
    converged: bool
    components: np.ndarray
    component_converged: list = field(default_factory=list)
    disagreement: list = field(default_factory=list)

    @property
    def connected(self) -> bool:
        return len(self.component_converged) == 1

    @property
    def agreed_globally(self) -> bool:
        """All agents share one component and agree within tolerance."""
        return self.connected and self.converged


def _disagreement(states: Sequence[ConsensusState], members: np.ndarray) -> float:
    if members.size < 2:
        return 0.0
    means = np.stack([states[i].mean for i in members])
    return float(np.max(means.max(axis=0) - means.min(axis=0)))


def run_consensus(states: Sequence[ConsensusState], g: CommGraph, rounds: int = 20,
                  tol: float = 0.05) -> ConsensusResult:
    """Iterate rounds until every connected component agrees within ``tol`` feet."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    labels = g.components()
    groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    states = list(states)
    for r in range(1, rounds + 1):
        states = consensus_round(states, g)
        gaps = [_disagreement(states, members) for members in groups]
        done = [gap < tol for gap in gaps]
        if all(done):
            break
    return ConsensusResult(states, r, all(done), labels, done, gaps)


@dataclass(frozen=True)
class ConsensusConfig:
    rounds: int = 20
    tol: float = 0.05
    process_noise: float = 0.01
    # full covariance up to this many cells; tiles of tile_cells cells above it
    full_max_cells: int = 1024
    tile_cells: int = 256


def grid_tiles(rows: int, cols: int, tile_cells: int) -> list[np.ndarray]:
    side = max(1, int(np.sqrt(tile_cells)))
    tiles = []
    for r0 in range(0, rows, side):
        for c0 in range(0, cols, side):
            rr, cc = np.mgrid[r0:min(r0 + side, rows), c0:min(c0 + side, cols)]
            tiles.append((rr * cols + cc).ravel())
    return tiles


class BeliefFusion:
    """Assembles consensus states from beliefs and runs the consensus.

    Kernel matrices (and their inverses) depend only on the grid, so they are
    computed once per instance.
    """

    def __init__(self, kernel_mat: np.ndarray, cfg: ConsensusConfig = ConsensusConfig(),
                 rows: int | None = None, cols: int | None = None):
        self.cfg = cfg
        m = kernel_mat.shape[0]
        if m <= cfg.full_max_cells or rows is None:
            self.blocks = [np.arange(m)]
        else:
            self.blocks = grid_tiles(rows, cols, cfg.tile_cells)
        self._kernels = []
        for idx in self.blocks:
            k = kernel_mat[np.ix_(idx, idx)]
            self._kernels.append((k, _spd_inverse(k)))

    def fuse(self, beliefs: Sequence[BeliefMap], g: CommGraph) -> tuple[list[BeliefMap], list[ConsensusResult]]:
        n = len(beliefs)
        means = np.zeros((n, beliefs[0].mean.size))
        variances = np.zeros_like(means)
        results = []
        for idx, (k, k_inv) in zip(self.blocks, self._kernels):
            states = [
                ConsensusState.from_belief(BeliefMap(b.mean[idx], b.variance[idx]), k, k_inv,
                                           self.cfg.process_noise)
                for b in beliefs
            ]
            result = run_consensus(states, g, self.cfg.rounds, self.cfg.tol)
            for a, s in enumerate(result.states):
                means[a, idx] = s.mean
                variances[a, idx] = s.variance
            results.append(result)
        return [BeliefMap(means[a], np.maximum(variances[a], 0.0)) for a in range(n)], results
