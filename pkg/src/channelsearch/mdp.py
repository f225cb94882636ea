"""Myopic MDP survey planner with UCB and MVI (max-value information) rewards.

States are (cell, heading) with eight compass headings.  From a state the
vehicle may go ahead, ahead-left or ahead-right; an action reaches its
intended cell with probability ``p_success`` and one of the other available
cells otherwise.  The planner maximises the expected undiscounted sum of cell
rewards over a fixed look-ahead.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr

from .gpr import BeliefMap

# clockwise from north; north is towards row 0
HEADINGS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
HEADING_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
TIE_TOL = 1e-9


class MdpState(NamedTuple):
    cell: int
    heading: int


@dataclass(frozen=True)
class MdpConfig:
    lookahead: int = 6
    p_success: float = 0.8
    reward: str = "UCB"
    beta: float = 1.5
    mvi_samples: int = 5

    def __post_init__(self):
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        if not 1 / 3 < self.p_success <= 1:
            raise ValueError("p_success must be in (1/3, 1]")
        if self.reward not in ("UCB", "MVI"):
            raise ValueError("reward must be 'UCB' or 'MVI'")


def heading_index(name: str) -> int:
    return HEADING_NAMES.index(name)


def actions(s: MdpState, rows: int, cols: int) -> list[MdpState]:
    """In-bounds successors in the order ahead, ahead-left, ahead-right."""
    r, c = divmod(s.cell, cols)
    out = []
    for h in (s.heading, (s.heading - 1) % 8, (s.heading + 1) % 8):
        dr, dc = HEADINGS[h]
        nr, nc = r + dr, c + dc
        if 0 <= nr < rows and 0 <= nc < cols:
            out.append(MdpState(nr * cols + nc, h))
    return out


def available_actions(s: MdpState, rows: int, cols: int) -> list[MdpState]:
    """``actions(s)``, or the actions after turning around when none are in bounds."""
    acts = actions(s, rows, cols)
    if not acts:
        acts = actions(MdpState(s.cell, (s.heading + 4) % 8), rows, cols)
    return acts


def transition(s: MdpState, a: MdpState, rows: int, cols: int, p_success: float = 0.8,
               successors: Sequence[MdpState] | None = None) -> list[tuple[MdpState, float]]:
    succ = list(successors) if successors is not None else actions(s, rows, cols)
    if a not in succ:
        raise ValueError(f"{a} is not an action of {s}")
    if len(succ) == 1:
        return [(a, 1.0)]
    slip = (1.0 - p_success) / (len(succ) - 1)
    return [(t, p_success if t == a else slip) for t in succ]


def ucb_reward(mean, variance, beta: float = 1.5):
    return np.asarray(mean) + beta * np.sqrt(np.maximum(np.asarray(variance), 0.0))


def mvi_reward(mean, variance, maxima) -> np.ndarray:
    """Max-value entropy reduction averaged over sampled field maxima.

    For each sample ``z*`` with ``g = (z* - mean) / sd`` the information is
    ``g pdf(g) / (2 cdf(g)) - log cdf(g)``, the entropy drop from truncating
    the predictive Gaussian above at ``z*``.
    """
    maxima = np.atleast_1d(np.asarray(maxima, dtype=float))
    if maxima.size == 0:
        raise ValueError("maxima set is empty")
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 1e-18))
    g = (maxima[..., None] - mean[None, ...]) / sd[None, ...] if mean.ndim else (maxima - mean) / sd
    log_cdf = log_ndtr(g)
    ratio = np.exp(-0.5 * g * g - 0.5 * np.log(2 * np.pi) - log_cdf)
    info = 0.5 * g * ratio - log_cdf
    return np.maximum(info.mean(axis=0), 0.0)


def sample_maxima(belief: BeliefMap, n: int, rng: np.random.Generator) -> np.ndarray:
    """Samples of the field maximum from a Gumbel fit to prod_i cdf((z - mean_i) / sd_i)."""
    mean = belief.mean
    sd = np.sqrt(np.maximum(belief.variance, 1e-12))

    def log_cdf_max(z):
        return float(np.sum(log_ndtr((z - mean) / sd)))

    lo = float(np.max(mean))
    hi = float(np.max(mean + 10 * sd)) + 1.0

    def quantile(p):
        target = np.log(p)
        if log_cdf_max(lo) >= target:
            return lo
        return brentq(lambda z: log_cdf_max(z) - target, lo, hi, xtol=1e-8)

    q25, q50, q75 = quantile(0.25), quantile(0.5), quantile(0.75)
    b = (q75 - q25) / (np.log(-np.log(0.25)) - np.log(-np.log(0.75)))
    a = q50 + b * np.log(-np.log(0.5))
    u = rng.uniform(size=n)
    if b <= 0:
        z = np.full(n, q50)
    else:
        z = a - b * np.log(-np.log(u))
    return np.maximum(z, lo + 1e-6)


def reward_field(belief: BeliefMap, cfg: MdpConfig, maxima=None) -> np.ndarray:
    if cfg.reward == "UCB":
        return ucb_reward(belief.mean, belief.variance, cfg.beta)
    if maxima is None:
        raise ValueError("MVI reward needs sampled maxima")
    return mvi_reward(belief.mean, belief.variance, maxima)


@lru_cache(maxsize=8)
def _transition_tables(rows: int, cols: int, p_success: float):
    """Successor indices, transition probabilities and action masks for every state.

    State ``cell * 8 + heading``; index ``rows * cols * 8`` is a zero-value
    sink used to pad states with fewer than three actions.
    """
    n_states = rows * cols * 8
    succ = np.full((n_states, 3), n_states, dtype=np.intp)
    prob = np.zeros((n_states, 3, 3))
    valid = np.zeros((n_states, 3), dtype=bool)
    for cell in range(rows * cols):
        for h in range(8):
            s = MdpState(cell, h)
            acts = available_actions(s, rows, cols)
            i = cell * 8 + h
            for k, a in enumerate(acts):
                succ[i, k] = a.cell * 8 + a.heading
                valid[i, k] = True
                for t, (_, p) in enumerate(transition(s, a, rows, cols, p_success, acts)):
                    prob[i, k, t] = p
    for arr in (succ, prob, valid):
        arr.setflags(write=False)
    return succ, prob, valid


class MyopicPlanner:
    """Finite-horizon expectimax over all (cell, heading) states of a grid.

    Values depend only on the reward field, so they are recomputed only when
    the rewards change (new consensus data) and reused for every cell entry in
    between.  Transition tables are shared by all planners on a grid.
    """

    def __init__(self, rows: int, cols: int, cfg: MdpConfig = MdpConfig()):
        self.rows, self.cols, self.cfg = rows, cols, cfg
        self._succ, self._prob, self._valid = _transition_tables(rows, cols, cfg.p_success)
        self._reward = None

    def set_reward(self, reward_cells) -> None:
        reward_cells = np.asarray(reward_cells, dtype=float)
        if reward_cells.shape != (self.rows * self.cols,):
            raise ValueError("one reward per cell required")
        self._reward = reward_cells
        r_state = np.append(np.repeat(reward_cells, 8), 0.0)
        value = np.zeros(r_state.size)
        for _ in range(self.cfg.lookahead - 1):
            value = np.append(self._q_values(r_state, value).max(axis=1), 0.0)
        self._r_state, self._tail = r_state, value

    def _q_values(self, r_state, value) -> np.ndarray:
        w = r_state[self._succ] + value[self._succ]
        q = np.einsum("sak,sk->sa", self._prob, w)
        return np.where(self._valid, q, -np.inf)

    def action_values(self, s: MdpState) -> tuple[list[MdpState], np.ndarray]:
        if self._reward is None:
            raise RuntimeError("set_reward must be called before planning")
        i = s.cell * 8 + s.heading
        w = self._r_state[self._succ[i]] + self._tail[self._succ[i]]
        q = self._prob[i] @ w
        acts = available_actions(s, self.rows, self.cols)
        return acts, q[: len(acts)]

    def plan(self, s: MdpState) -> MdpState:
        acts, q = self.action_values(s)
        return acts[_argmax_first(q)]


def _argmax_first(q: np.ndarray) -> int:
    best = float(np.max(q))
    tol = TIE_TOL * max(1.0, abs(best))
    return int(np.flatnonzero(q >= best - tol)[0])


def plan_action(s: MdpState, reward_cells, cfg: MdpConfig, rows: int, cols: int) -> MdpState:
    """Next waypoint (intended successor state) from ``s`` under per-cell rewards."""
    planner = MyopicPlanner(rows, cols, cfg)
    planner.set_reward(reward_cells)
    return planner.plan(s)
