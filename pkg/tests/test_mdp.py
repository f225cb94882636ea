from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from channelsearch.gpr import BeliefMap
from channelsearch.mdp import (HEADING_NAMES, MdpConfig, MdpState, MyopicPlanner, actions, heading_index,
                               mvi_reward, plan_action, reward_field, sample_maxima, transition, ucb_reward)

# independent restatement of the action model for the oracle: N, NE, E, ... clockwise
OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def oracle_successors(cell, h, rows, cols):
    r, c = divmod(cell, cols)
    for heading in (h, (h + 4) % 8):
        out = []
        for hh in (heading, (heading + 7) % 8, (heading + 1) % 8):
            nr, nc = r + OFFSETS[hh][0], c + OFFSETS[hh][1]
            if 0 <= nr < rows and 0 <= nc < cols:
                out.append((nr * cols + nc, hh))
        if out:
            return out
    return []


def oracle_value(cell, h, depth, reward, rows, cols, p):
    if depth == 0:
        return 0.0
    succ = oracle_successors(cell, h, rows, cols)
    return max(oracle_q(succ, k, depth, reward, rows, cols, p) for k in range(len(succ)))


def oracle_q(succ, k, depth, reward, rows, cols, p):
    slip = (1 - p) / (len(succ) - 1) if len(succ) > 1 else 0.0
    total = 0.0
    for t, (c2, h2) in enumerate(succ):
        w = (p if len(succ) > 1 else 1.0) if t == k else slip
        if w:
            total += w * (reward[c2] + oracle_value(c2, h2, depth - 1, reward, rows, cols, p))
    return total


def oracle_plan(cell, h, reward, rows, cols, depth, p):
    succ = oracle_successors(cell, h, rows, cols)
    q = [oracle_q(succ, k, depth, reward, rows, cols, p) for k in range(len(succ))]
    best = max(q)
    k = next(i for i, v in enumerate(q) if v >= best - 1e-9 * max(1.0, abs(best)))
    return MdpState(*succ[k])


def test_actions_examples():
    n = heading_index("N")
    acts = actions(MdpState(2 * 5 + 2, n), 5, 5)
    assert [a.cell for a in acts] == [1 * 5 + 2, 1 * 5 + 1, 1 * 5 + 3]
    assert [HEADING_NAMES[a.heading] for a in acts] == ["N", "NW", "NE"]
    ne = actions(MdpState(2 * 5 + 2, heading_index("NE")), 5, 5)
    assert sorted(HEADING_NAMES[a.heading] for a in ne) == ["E", "N", "NE"]
    corner = actions(MdpState(0, heading_index("NW")), 5, 5)
    assert corner == []
    assert [a.cell for a in actions(MdpState(0, heading_index("E")), 5, 5)] == [1, 6]


def test_transition_examples():
    s = MdpState(12, heading_index("S"))
    acts = actions(s, 5, 5)
    assert [p for _, p in transition(s, acts[0], 5, 5, 1.0)] == [1.0, 0.0, 0.0]
    assert [p for _, p in transition(s, acts[1], 5, 5, 0.8)] == pytest.approx([0.1, 0.8, 0.1])
    # top edge heading east: ahead and ahead-right (SE) remain
    s2 = MdpState(2, heading_index("E"))
    acts2 = actions(s2, 5, 5)
    assert [a.cell for a in acts2] == [3, 8]
    assert [p for _, p in transition(s2, acts2[0], 5, 5, 0.8)] == pytest.approx([0.8, 0.2])
    with pytest.raises(ValueError):
        transition(s, MdpState(0, 0), 5, 5)


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 6), data=st.data(), p=st.floats(0.34, 1.0))
def test_transition_sums_to_one(rows, cols, data, p):
    cell = data.draw(st.integers(0, rows * cols - 1))
    s = MdpState(cell, data.draw(st.integers(0, 7)))
    for a in actions(s, rows, cols):
        assert math.isclose(sum(w for _, w in transition(s, a, rows, cols, p)), 1.0, abs_tol=1e-12)


def test_ucb_examples():
    assert ucb_reward(20.0, 4.0, 0.0) == 20.0
    assert ucb_reward(20.0, 4.0, 2.0) == 24.0
    assert ucb_reward(16.0, 9.0, 1.5) > ucb_reward(16.0, 4.0, 1.5)
    # exploration bonus vanishes with variance
    assert ucb_reward(23.0, 0.0, 1.5) == 23.0


def mes_oracle(mean, var, z):
    """Entropy of N(mean, var) minus entropy of its truncation above at z, by quadrature."""
    sd = math.sqrt(var)
    g = (z - mean) / sd
    cdf = stats.norm.cdf(g)

    def integrand(u):
        f = stats.norm.pdf(u) / cdf
        return -f * math.log(f) if f > 0 else 0.0

    h_trunc, _ = integrate.quad(integrand, -40, g, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 0.5 * math.log(2 * math.pi * math.e) - h_trunc


def test_mvi_matches_quadrature():
    mean = np.array([14.0, 18.0, 21.0])
    var = np.array([4.0, 9.0, 1.0])
    z = 22.5
    got = mvi_reward(mean, var, [z])
    want = [mes_oracle(m, v, z) for m, v in zip(mean, var)]
    assert np.allclose(got, want, atol=1e-9, rtol=0)


def test_mvi_examples():
    assert mvi_reward(10.0, 1e-12, [20.0, 22.0]) == pytest.approx(0.0, abs=1e-12)
    r = mvi_reward(np.array([18.0, 15.0]), np.array([4.0, 4.0]), [20.0, 21.0, 23.0])
    assert r[0] >= r[1] >= 0
    with pytest.raises(ValueError):
        mvi_reward(1.0, 1.0, [])


def test_sample_maxima():
    rng = np.random.default_rng(0)
    belief = BeliefMap(np.array([16.0, 18.0, 20.0, 12.0]), np.array([25.0, 4.0, 1.0, 0.5]))
    z = sample_maxima(belief, 20001, rng)
    assert z.min() > belief.mean.max()
    cdf_at_median = np.prod(stats.norm.cdf((np.median(z) - belief.mean) / np.sqrt(belief.variance)))
    assert cdf_at_median == pytest.approx(0.5, abs=0.02)
    a = sample_maxima(belief, 5, np.random.default_rng(3))
    assert np.array_equal(a, sample_maxima(belief, 5, np.random.default_rng(3)))
    assert reward_field(belief, MdpConfig(reward="MVI"), a).shape == (4,)
    with pytest.raises(ValueError):
        reward_field(belief, MdpConfig(reward="MVI"))


def test_plan_examples():
    rows = cols = 5
    reward = np.zeros(25)
    s = MdpState(12, heading_index("N"))
    reward[6] = 5.0  # ahead-right cell (NE)
    assert plan_action(s, reward, MdpConfig(lookahead=1, p_success=1.0), rows, cols).cell == 6
    assert plan_action(s, np.ones(25), MdpConfig(), rows, cols) == MdpState(7, heading_index("N"))
    # straight ahead tied with left and right -> straight; left and right tied -> left
    reward = np.zeros(25)
    reward[[6, 8]] = 1.0
    assert plan_action(s, reward, MdpConfig(lookahead=1), rows, cols).cell == 6
    with pytest.raises(RuntimeError):
        MyopicPlanner(rows, cols).plan(s)


def test_plan_matches_hand_set_lookahead3():
    rows = cols = 5
    reward = np.array([
        [1, 0, 0, 0, 9],
        [0, 2, 0, 0, 0],
        [0, 0, 0, 3, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
    ], dtype=float).ravel()
    s = MdpState(4 * 5 + 2, heading_index("N"))
    cfg = MdpConfig(lookahead=3, p_success=0.8)
    assert plan_action(s, reward, cfg, rows, cols) == oracle_plan(s.cell, s.heading, reward, rows, cols, 3, 0.8)


def test_plan_matches_expectimax_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        reward = rng.uniform(0, 10, 36)
        planner = MyopicPlanner(6, 6, MdpConfig(lookahead=3, p_success=0.8))
        planner.set_reward(reward)
        for cell in range(36):
            for h in range(8):
                if not oracle_successors(cell, h, 6, 6):
                    continue
                assert planner.plan(MdpState(cell, h)) == oracle_plan(cell, h, reward, 6, 6, 3, 0.8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 4), a=st.floats(0.1, 10), b=st.floats(-50, 50))
def test_plan_affine_invariant(seed, depth, a, b):
    rng = np.random.default_rng(seed)
    reward = rng.integers(0, 4, 25).astype(float)  # integer rewards exercise the tie rule
    s = MdpState(int(rng.integers(0, 25)), int(rng.integers(0, 8)))
    cfg = MdpConfig(lookahead=depth)
    assert plan_action(s, reward, cfg, 5, 5) == plan_action(s, a * reward + b, cfg, 5, 5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 3), rows=st.integers(2, 6), cols=st.integers(2, 6))
def test_plan_expectimax_property(seed, depth, rows, cols):
    rng = np.random.default_rng(seed)
    reward = rng.uniform(0, 10, rows * cols)
    cell, h = int(rng.integers(0, rows * cols)), int(rng.integers(0, 8))
    cfg = MdpConfig(lookahead=depth)
    assert plan_action(MdpState(cell, h), reward, cfg, rows, cols) == oracle_plan(
        cell, h, reward, rows, cols, depth, 0.8)


def test_config_validation():
    for bad in ({"lookahead": 0}, {"p_success": 0.3}, {"reward": "EI"}):
        with pytest.raises(ValueError):
            MdpConfig(**bad)
