import random

import pytest

from conftest import random_map
from cpmapf.grid import Coord, GridMap
from cpmapf.mapf import (EDGE, VERTEX, Constraint, DynamicObstacleSet, Path,
                         PathSearchExhausted, low_level_search)
from oracles import enumerate_best_cost


def test_unconstrained_cost_is_manhattan(open5):
    path, fmin = low_level_search(open5, 0, Coord(0, 0), Coord(4, 3))
    assert path.cost == 7 == fmin
    assert path.vertices[0] == Coord(0, 0) and path.vertices[-1] == Coord(4, 3)


def test_vertex_constraint_matches_enumeration_oracle():
    # 5x5 with a single corridor through the middle wall
    m = GridMap(5, 5, blocked=[(2, 0), (2, 1), (2, 3), (2, 4)])
    start, goal = Coord(0, 2), Coord(4, 2)
    base, _ = low_level_search(m, 0, start, goal)
    assert base.cost == 4
    # block the corridor cell exactly when the shortest path crosses it
    cons = [Constraint(0, VERTEX, 2, vertex=Coord(2, 2))]
    path, fmin = low_level_search(m, 0, start, goal, cons)
    oracle = enumerate_best_cost(m, start, goal, {((2, 2), 2)}, set(), max_len=8)
    assert path.cost == oracle == 5
    assert path.at(2) != Coord(2, 2)


def test_edge_constraint_forces_detour(open5):
    cons = [Constraint(0, EDGE, 0, edge=(Coord(0, 0), Coord(0, 1)))]
    path, _ = low_level_search(open5, 0, Coord(0, 0), Coord(0, 4), cons)
    oracle = enumerate_best_cost(open5, (0, 0), (0, 4), set(),
                                 {((0, 0), (0, 1), 0)}, max_len=8)
    assert path.cost == oracle
    assert not (path.at(0) == Coord(0, 0) and path.at(1) == Coord(0, 1))


def test_focal_bound_holds_with_w():
    rng = random.Random(5)
    for _ in range(25):
        m = random_map(rng, 7, 9)
        cells = list(m.passable_coords())
        s, g = rng.sample(cells, 2)
        if m.dist(s, g) == float("inf"):
            continue
        other = Path(agent=99, vertices=(g,), t0=0)  # parked on the goal
        path, fmin = low_level_search(m, 0, s, g, other_paths=[other], w=1.5)
        assert path.cost <= 1.5 * fmin


def test_obstacle_vertices_avoided_at_their_timesteps(open5):
    obs = DynamicObstacleSet({1: frozenset({Coord(0, 1)}), 2: frozenset({Coord(0, 2)})},
                             policy="drop")
    path, _ = low_level_search(open5, 0, Coord(0, 0), Coord(0, 4), obstacles=obs)
    assert path.at(1) != Coord(0, 1)
    assert path.at(2) != Coord(0, 2)
    assert path.cost >= 4


def test_persist_policy_keeps_final_set_alive(open5):
    # final-step set blocks the goal forever -> no valid arrival
    obs = DynamicObstacleSet({1: frozenset({Coord(0, 4)})}, policy="persist")
    with pytest.raises(PathSearchExhausted) as e:
        low_level_search(open5, 7, Coord(0, 0), Coord(0, 4), obstacles=obs)
    assert e.value.agent == 7
    # drop policy frees it after t=1
    path, _ = low_level_search(open5, 7, Coord(0, 0), Coord(0, 4),
                               obstacles=DynamicObstacleSet({1: frozenset({Coord(0, 4)})},
                                                            policy="drop"))
    assert path.cost == 4


def test_horizon_limits_enforcement(open5):
    # a constraint at t=9 is beyond a 3-step window and must not detour the path
    cons = [Constraint(0, VERTEX, 9, vertex=Coord(0, 2))]
    path, _ = low_level_search(open5, 0, Coord(0, 0), Coord(0, 4), cons, horizon=3)
    assert path.cost == 4
    # the same constraint inside the window forces a detour or delay
    cons_in = [Constraint(0, VERTEX, 2, vertex=Coord(0, 2))]
    path2, _ = low_level_search(open5, 0, Coord(0, 0), Coord(0, 4), cons_in, horizon=3)
    assert path2.at(2) != Coord(0, 2)


def test_horizon_completion_is_shortest_beyond_window(open5):
    # fully fenced in for the window by obstacles except waiting in place
    obs = DynamicObstacleSet({t: frozenset({Coord(0, 1), Coord(1, 0)}) for t in (1, 2)},
                             policy="drop")
    path, fmin = low_level_search(open5, 0, Coord(0, 0), Coord(0, 4),
                                  obstacles=obs, horizon=2)
    # waits 2 steps, then completes with the 4-step straight line
    assert path.cost == 6
    assert path.vertices[:3] == (Coord(0, 0), Coord(0, 0), Coord(0, 0))
    assert path.vertices[-1] == Coord(0, 4)


def test_timestep_cap_exhaustion():
    with pytest.warns(UserWarning):
        m = GridMap(1, 3, blocked=[(1, 0)])
    with pytest.raises(PathSearchExhausted):
        low_level_search(m, 3, Coord(0, 0), Coord(2, 0))


def test_wait_at_start_when_goal_blocked_early(open5):
    # goal blocked at t=1..3: agent must arrive later
    cons = [Constraint(0, VERTEX, t, vertex=Coord(0, 1)) for t in (1, 2, 3)]
    path, _ = low_level_search(open5, 0, Coord(0, 0), Coord(0, 1), cons)
    assert path.cost == 4
    assert path.at(4) == Coord(0, 1)


def test_deterministic_output(open5):
    a = low_level_search(open5, 0, Coord(0, 0), Coord(4, 4))
    b = low_level_search(open5, 0, Coord(0, 0), Coord(4, 4))
    assert a[0].vertices == b[0].vertices and a[1] == b[1]


def test_w_below_one_rejected(open5):
    with pytest.raises(ValueError):
        low_level_search(open5, 0, Coord(0, 0), Coord(1, 1), w=0.5)
