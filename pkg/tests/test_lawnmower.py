from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelsearch.lawnmower import LawnmowerError, covered_cells, generate_lawnmower
from channelsearch.scenario import BathyScenario, generate_suite, world_to_grid

from conftest import make_grid


def test_ten_by_ten_single():
    s = make_grid(10, 10)
    plan = generate_lawnmower(s, 1)
    (wps,) = plan.waypoints
    assert len(plan.lanes[0]) == 10
    assert len(wps) == 20  # two ends per lane -> 9 cross-links between them
    assert covered_cells(s, plan) == [set(range(100))]


def test_two_strips_partition():
    s = make_grid(10, 10)
    plan = generate_lawnmower(s, 2)
    assert [len(l) for l in plan.lanes] == [5, 5]
    a, b = covered_cells(s, plan)
    assert not a & b and a | b == set(range(100))


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 12), cols=st.integers(1, 15), n=st.integers(1, 4), rotation=st.floats(-90, 90))
def test_coverage_exactly_once(rows, cols, n, rotation):
    if rows * cols < 2:
        return
    s = BathyScenario("c", rows, cols, 20.0, rotation, (5.0, -3.0), np.full(rows * cols, 20.0), frozenset({0}),
                      frozenset({rows * cols - 1}))
    if n > cols:
        with pytest.raises(LawnmowerError):
            generate_lawnmower(s, n)
        return
    plan = generate_lawnmower(s, n)
    sets = covered_cells(s, plan)
    assert sum(len(c) for c in sets) == rows * cols and set().union(*sets) == set(range(rows * cols))
    # lanes run along the columns (start -> goal axis) in the grid frame
    for wps in plan.waypoints:
        local = world_to_grid(s, wps)
        assert np.allclose(local[0::2, 0], local[1::2, 0])
    assert generate_lawnmower(s, n).lanes == plan.lanes


def test_total_length_within_one_lane():
    s = generate_suite("acceptance")[0]
    one = sum(generate_lawnmower(s, 1).path_lengths())
    for n in (2, 3, 4):
        total = sum(generate_lawnmower(s, n).path_lengths())
        assert abs(total - one) <= s.rows * s.cell_size


def test_four_vehicles_quarter_time():
    s = generate_suite("acceptance")[0]
    t1 = generate_lawnmower(s, 1).path_lengths()[0] / 2.4
    t4 = np.array(generate_lawnmower(s, 4).path_lengths()) / 2.4
    assert abs(t4.mean() - t1 / 4) <= 0.1 * t1 / 4
    assert t1 == pytest.approx(7908.3, abs=1)


def test_errors():
    s = make_grid(4, 3)
    with pytest.raises(LawnmowerError):
        generate_lawnmower(s, 0)
    with pytest.raises(LawnmowerError):
        generate_lawnmower(s, 1, spacing=25.0)
    assert len(generate_lawnmower(s, 1, spacing=10.0).lanes[0]) == 6
