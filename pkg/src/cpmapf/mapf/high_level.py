"""High-level constraint-tree search.

Three modes share one engine: optimal CBS (w = 1), bounded-suboptimal
ECBS(w), and the dynamic-uncontrollable-agent variant that additionally
feeds predicted paths and CP-interval vertex sets into conflict detection
and hands constraints only to controlled agents.
"""

import time
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .low_level import low_level_search
from .types import (CONTROLLED, EDGE, INTERVAL, PREDICTED, VERTEX, Conflict,
                    Constraint, DynamicObstacleSet, Party, Path,
                    PathSearchExhausted, Solution, UnsolvableError)

MODES = ("cbs", "ecbs", "dua-ecbs")


def iter_conflicts(paths, predictions=None, obstacles=None, t0=0, horizon=None):
    """Yield conflicts in deterministic earliest-first order.

    Scans controlled-controlled vertex/edge conflicts, controlled vs
    predicted-path conflicts, and controlled occupancy of obstacle vertices.
    Vertex occupancy at t0 is the fixed starting state and is not a conflict;
    moves departing at t0 are. With a conflict horizon, only occupancy up to
    t0+horizon and moves departing before t0+horizon count.
    """
    predictions = predictions or {}
    obstacles = obstacles or DynamicObstacleSet.empty()
    if not paths:
        return
    ctrl = sorted(paths.items(), key=lambda kv: str(kv[0]))
    preds = sorted(predictions.items(), key=lambda kv: str(kv[0]))

    t_scan = max(p.end_t for _, p in ctrl)
    if obstacles.max_time() is not None:
        t_scan = max(t_scan, obstacles.max_time())
    if preds:
        t_scan = max(t_scan, max(p.end_t for _, p in preds))
    if horizon is not None:
        t_scan = min(t_scan, t0 + horizon)

    for t in range(t0, t_scan + 1):
        if t > t0:
            # controlled-controlled vertex conflicts
            for i in range(len(ctrl)):
                ai, pi = ctrl[i]
                vi = pi.at(t)
                for j in range(i + 1, len(ctrl)):
                    aj, pj = ctrl[j]
                    if pj.at(t) == vi:
                        yield Conflict(VERTEX, (Party(CONTROLLED, ai), Party(CONTROLLED, aj)), vi, t)
            # controlled vs predicted-path vertex conflicts; predictions are
            # defined only over their horizon (what happens beyond it is the
            # obstacle set's beyond-horizon policy, not a parked ghost)
            for ai, pi in ctrl:
                vi = pi.at(t)
                for b, pb in preds:
                    if t <= pb.end_t and pb.at(t) == vi:
                        yield Conflict(VERTEX, (Party(CONTROLLED, ai), Party(PREDICTED, b)), vi, t)
            # controlled occupancy of CP-interval/obstacle vertices
            for ai, pi in ctrl:
                vi = pi.at(t)
                if obstacles.blocked(vi, t):
                    yield Conflict(VERTEX, (Party(CONTROLLED, ai), Party(INTERVAL)), vi, t)
        if horizon is not None and t >= t0 + horizon:
            continue
        # edge swaps departing at t
        for i in range(len(ctrl)):
            ai, pi = ctrl[i]
            u, v = pi.at(t), pi.at(t + 1)
            if u == v:
                continue
            for j in range(i + 1, len(ctrl)):
                aj, pj = ctrl[j]
                if pj.at(t) == v and pj.at(t + 1) == u:
                    yield Conflict(EDGE, (Party(CONTROLLED, ai), Party(CONTROLLED, aj)), (u, v), t)
            for b, pb in preds:
                if t < pb.end_t and pb.at(t) == v and pb.at(t + 1) == u:
                    yield Conflict(EDGE, (Party(CONTROLLED, ai), Party(PREDICTED, b)), (u, v), t)


def detect_first_conflict(paths, predictions=None, obstacles=None, t0=0, horizon=None):
    """Earliest conflict of the joint solution, or None when conflict-free."""
    return next(iter_conflicts(paths, predictions, obstacles, t0, horizon), None)


def count_conflicts(paths, predictions=None, obstacles=None, t0=0, horizon=None):
    """Focal heuristic: number of conflicting (pair, timestep) events."""
    return sum(1 for _ in iter_conflicts(paths, predictions, obstacles, t0, horizon))


def classify_conflict(conflict):
    """Constraint recipients: the controlled parties of the conflict.

    Two uncontrolled parties -> nobody; one controlled party -> only it;
    two controlled parties -> both.
    """
    return tuple(p.agent for p in conflict.parties if p.is_controlled)


def constraints_from_conflict(conflict):
    """Map each recipient to the constraint that bans its side of the conflict."""
    out = {}
    for slot, party in enumerate(conflict.parties):
        if not party.is_controlled:
            continue
        if conflict.kind == VERTEX:
            out[party.agent] = Constraint(party.agent, VERTEX, conflict.timestep,
                                          vertex=conflict.location)
        else:
            u, v = conflict.location
            edge = (u, v) if slot == 0 else (v, u)
            out[party.agent] = Constraint(party.agent, EDGE, conflict.timestep, edge=edge)
    return out


@dataclass
class _CTNode:
    constraints: dict
    paths: dict
    fmins: dict
    cost: int
    lb: int
    n_conflicts: int
    seq: int


def solve(m, agents, obstacles=None, predictions=None, mode="ecbs", w=1.5,
          horizon=None, t0=0, time_budget=None, timestep_cap=None,
          node_limit=None):
    """Constraint-tree search over the given controlled-agent instance.

    agents: dict id -> (start, goal) or list of (start, goal) pairs.
    On exceeding time_budget the focal weight w is incremented by 1 and the
    search continues; this repeats every further budget period. A node_limit
    turns a pathological constraint tree into a search-exhausted error
    instead of an open-ended grind.
    """
    started = time.perf_counter()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "cbs":
        w = 1.0
    if mode != "dua-ecbs" and horizon is not None:
        raise ValueError("conflict horizon is only meaningful in dua-ecbs mode")

    if not isinstance(agents, dict):
        agents = {i: sg for i, sg in enumerate(agents)}
    for a, (s, g) in agents.items():
        if not m.is_passable(s) or not m.is_passable(g):
            raise ValueError(f"agent {a}: start {tuple(s)} or goal {tuple(g)} not passable")
    starts = [tuple(s) for s, _ in agents.values()]
    goals = [tuple(g) for _, g in agents.values()]
    if len(set(starts)) != len(starts) or len(set(goals)) != len(goals):
        raise ValueError("instance is not well-formed: duplicate starts or goals")

    predictions = predictions or {}
    obstacles = obstacles or DynamicObstacleSet.empty()
    pred_paths = [predictions[b] for b in sorted(predictions, key=str)]
    unobstructed = not predictions and not obstacles.by_time and not obstacles.static
    order = sorted(agents, key=str)

    def replan(agent, cons, other, cur_w):
        start, goal = agents[agent]
        return low_level_search(m, agent, start, goal, cons, obstacles,
                                other, cur_w, horizon, t0, timestep_cap,
                                predictions=pred_paths)

    # Root node: plan agents independently against obstacles and predictions.
    paths, fmins = {}, {}
    for a in order:
        other = [paths[x] for x in order if x in paths]
        try:
            paths[a], fmins[a] = replan(a, (), other, w)
        except PathSearchExhausted as e:
            if unobstructed:
                raise UnsolvableError(a, f"agent {a}: no path exists ({e})") from e
            raise

    seq = count()
    root = _CTNode(constraints={a: frozenset() for a in order}, paths=paths,
                   fmins=fmins, cost=sum(p.cost for p in paths.values()),
                   lb=sum(fmins.values()),
                   n_conflicts=count_conflicts(paths, predictions, obstacles, t0, horizon),
                   seq=next(seq))

    active = [root]
    expanded = 0
    w_now = w
    next_deadline = None if time_budget is None else started + time_budget

    while active:
        if next_deadline is not None and time.perf_counter() > next_deadline:
            w_now += 1.0
            next_deadline += time_budget
        if node_limit is not None and expanded >= node_limit:
            raise PathSearchExhausted(None, f"constraint tree exceeded {node_limit} expansions")

        lb_min = min(n.lb for n in active)
        focal = [n for n in active if n.cost <= w_now * lb_min]
        node = min(focal, key=lambda n: (n.n_conflicts, n.cost, n.seq))
        active.remove(node)
        expanded += 1

        conflict = detect_first_conflict(node.paths, predictions, obstacles, t0, horizon)
        if conflict is None:
            remaining = min((n.lb for n in active), default=node.lb)
            runtime = time.perf_counter() - started
            sol = Solution(paths=dict(node.paths), cost=node.cost,
                           lower_bound=min(node.lb, remaining), expanded=expanded,
                           runtime_s=runtime, w_final=w_now)
            assert_solution_sound(m, sol, predictions, obstacles, t0, horizon)
            return sol

        recipients = classify_conflict(conflict)
        assert recipients, "detector only yields conflicts involving a controlled agent"
        new_cons = constraints_from_conflict(conflict)
        for r in recipients:
            cons = node.constraints[r] | {new_cons[r]}
            other = [node.paths[x] for x in order if x != r]
            try:
                new_path, new_fmin = replan(r, cons, other, w_now)
            except PathSearchExhausted:
                continue  # prune: no path under these constraints
            child_paths = dict(node.paths)
            child_paths[r] = new_path
            child_fmins = dict(node.fmins)
            child_fmins[r] = new_fmin
            child = _CTNode(
                constraints={**node.constraints, r: cons},
                paths=child_paths, fmins=child_fmins,
                cost=sum(p.cost for p in child_paths.values()),
                lb=sum(child_fmins.values()),
                n_conflicts=count_conflicts(child_paths, predictions, obstacles, t0, horizon),
                seq=next(seq),
            )
            active.append(child)

    raise PathSearchExhausted(None, "constraint tree exhausted without a conflict-free solution")


def assert_solution_sound(m, solution, predictions=None, obstacles=None, t0=0, horizon=None):
    """Full rescan: the emitted solution must be conflict-free and on-graph.

    This re-derives soundness rather than trusting the search's bookkeeping.
    """
    for a, p in solution.paths.items():
        for v in p.vertices:
            if not m.is_passable(v):
                raise AssertionError(f"agent {a}: path visits blocked cell {tuple(v)}")
        for u, v in zip(p.vertices, p.vertices[1:]):
            if v not in m.neighbors(u):
                raise AssertionError(f"agent {a}: illegal move {tuple(u)}->{tuple(v)}")
    conflict = detect_first_conflict(solution.paths, predictions, obstacles, t0, horizon)
    if conflict is not None:
        raise AssertionError(f"solution contains a conflict: {conflict}")
