"""Planning orchestration.

Ties the pieces together: snap calibrated uncertainty regions onto the graph
as per-timestep vertex sets, solve one-shot instances against them, and run
the lifelong rolling-horizon loop (predict, discretize, solve a windowed
instance, execute H steps, repeat) with reserved goal spots and the
exclude-and-hold fallback for agents the low level cannot serve.
"""

import math
import random
import time
from dataclasses import dataclass, replace

from . import mapf
from .conformal import nonconformity
from .grid import Coord
from .mapf import (DynamicObstacleSet, Path, PathSearchExhausted, Solution,
                   UnsolvableError)
from .prediction import DEFAULT_WINDOW, ObservationHistory
from .simulation import MetricsRecord

BASELINE_KINDS = ("IGNORE", "OBSTACLE", "PRED", "CP")


class DeadlockError(RuntimeError):
    """An agent stayed excluded past the cap; carries a report dict."""

    def __init__(self, report):
        super().__init__(f"deadlock: agent {report['agent']} excluded for "
                         f"{report['consecutive_windows']} consecutive windows")
        self.report = report


@dataclass(frozen=True)
class IntervalVertexSets:
    """Discretized uncertainty regions: one vertex set per horizon step."""

    t0: int
    sets: tuple  # index h-1 -> frozenset of Coord
    radii: tuple

    @property
    def horizon(self):
        return len(self.sets)

    def at_step(self, h):
        return self.sets[h - 1]


def discretize(intervals, preds, current, m):
    """Vertices that are both within the step radius of some agent's
    prediction and reachable by that same agent within h hops.

    An infinite radius degenerates to everything reachable within h hops of
    any uncontrolled agent.
    """
    if intervals.horizon != preds.horizon:
        raise ValueError(f"interval horizon {intervals.horizon} != prediction horizon {preds.horizon}")
    sets = []
    fields = {b: m.distance_field(current[b]) for b in preds.points}
    for h in range(1, preds.horizon + 1):
        radius = intervals.radii[h - 1]
        cells = set()
        for b, pts in preds.points.items():
            field = fields[b]
            if math.isinf(radius):
                cells.update(m.coord(i) for i in range(len(field)) if field[i] <= h)
                continue
            pr, pc = pts[h - 1]
            # box padded by one cell; membership decided by the same hypot
            # arithmetic the nonconformity score uses
            for r in range(max(0, math.floor(pr - radius) - 1),
                           min(m.height - 1, math.ceil(pr + radius) + 1) + 1):
                for c in range(max(0, math.floor(pc - radius) - 1),
                               min(m.width - 1, math.ceil(pc + radius) + 1) + 1):
                    if math.hypot(pr - r, pc - c) > radius:
                        continue
                    v = Coord(r, c)
                    if m.is_passable(v) and field[m.index(v)] <= h:
                        cells.add(v)
        sets.append(frozenset(cells))
    return IntervalVertexSets(t0=preds.issued_at, sets=tuple(sets), radii=tuple(intervals.radii))


def round_to_cell(point, m):
    """Nearest cell to a continuous point, clamped into the map bounds."""
    r = min(max(int(math.floor(point[0] + 0.5)), 0), m.height - 1)
    c = min(max(int(math.floor(point[1] + 0.5)), 0), m.width - 1)
    return Coord(r, c)


def prediction_paths(bundle, current, m, t0):
    """Predicted vertex paths: current position then the rounded predictions."""
    out = {}
    for b, pts in bundle.points.items():
        verts = [current[b]] + [round_to_cell(p, m) for p in pts]
        out[b] = Path(agent=b, vertices=tuple(verts), t0=t0)
    return out


def build_window_inputs(kind, m, hist, predictor, calibration, t0, H,
                        policy="persist"):
    """Solver inputs for one planning window under a baseline kind.

    IGNORE sees nothing; OBSTACLE freezes current uncontrolled positions for
    the whole window; PRED adds predicted paths and their vertices; CP adds
    the discretized interval sets on top.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}")
    empty = (DynamicObstacleSet(policy=policy), {}, None, None)
    if kind == "IGNORE" or not hist.obs:
        return empty
    current = hist.current()
    if kind == "OBSTACLE":
        cells = frozenset(current.values())
        return (DynamicObstacleSet({t0 + h: cells for h in range(1, H + 1)}, policy=policy),
                {}, None, None)
    bundle = predictor(hist, m, H).clamped(m)
    paths = prediction_paths(bundle, current, m, t0)
    by_time = {t0 + h: {p.at(t0 + h) for p in paths.values()} for h in range(1, H + 1)}
    if kind == "PRED":
        return (DynamicObstacleSet({t: frozenset(s) for t, s in by_time.items()}, policy=policy),
                paths, bundle, None)
    if calibration is None:
        raise ValueError("CP kind needs a calibration artifact")
    if calibration.H != H:
        raise ValueError(f"calibration horizon {calibration.H} != window horizon {H}")
    sets = discretize(calibration.intervals, bundle, current, m)
    for h in range(1, H + 1):
        by_time[t0 + h].update(sets.at_step(h))
    obstacles = DynamicObstacleSet({t: frozenset(s) for t, s in by_time.items()}, policy=policy)
    return obstacles, paths, bundle, sets


@dataclass
class OpenLoopResult:
    solution: Solution
    interval_sets: object
    bundle: object
    obstacles: DynamicObstacleSet
    predictions: dict


def solve_open_loop(m, controlled, hist, predictor, calibration, w=1.5, t0=0,
                    policy="persist", time_budget=None, timestep_cap=None,
                    node_limit=None):
    """One-shot plan: predict once, discretize, then solve to the goals.

    With zero uncontrolled agents this degenerates to plain ECBS. There is
    no exclusion fallback here; an unsolvable one-shot instance is an error.
    """
    hist = hist or ObservationHistory()
    if not hist.obs:
        sol = mapf.solve(m, controlled, mode="ecbs", w=w, t0=t0,
                         time_budget=time_budget, timestep_cap=timestep_cap,
                         node_limit=node_limit)
        return OpenLoopResult(sol, None, None, DynamicObstacleSet(policy=policy), {})
    if calibration is None:
        raise ValueError("open-loop solve with uncontrolled agents needs a calibration artifact")
    obstacles, paths, bundle, sets = build_window_inputs(
        "CP", m, hist, predictor, calibration, t0, calibration.H, policy)
    sol = mapf.solve(m, controlled, obstacles=obstacles, predictions=paths,
                     mode="dua-ecbs", w=w, t0=t0, time_budget=time_budget,
                     timestep_cap=timestep_cap, node_limit=node_limit)
    return OpenLoopResult(sol, sets, bundle, obstacles, paths)


def _draw_goal(rng, m, reserved):
    pool = [s for s in sorted(m.task_spots) if s not in reserved]
    if not pool:
        return None
    return pool[rng.randrange(len(pool))]


def run_closed_loop(m, starts, walkers, predictor, calibration, *, w=1.5,
                    w_hat=10, H=10, T_hat=100, seed=0, kind="CP",
                    goal_queues=None, policy="persist", warmup=DEFAULT_WINDOW - 1,
                    exclusion_cap=10, window_budget_s=None, time_budget=None,
                    timestep_cap=None, map_name=None, delta=None, node_limit=None,
                    on_window=None):
    """Lifelong rolling-horizon run; returns (MetricsRecord, event log).

    Every H steps: observe, predict over the window, discretize, solve with
    conflict horizon w_hat, then execute exactly H steps for every agent.
    Goals are reserved task spots, popped when occupied, and topped up with
    fresh random reserved spots whenever the remaining tour fits inside the
    window. An agent whose low level fails is excluded for the window: it
    holds position, becomes a static obstacle for the others, re-enters next
    window, and the forced interaction is logged and counted as a collision.
    """
    if H < 1 or w_hat < H:
        raise ValueError(f"need 1 <= H <= w_hat, got H={H}, w_hat={w_hat}")
    if T_hat % H != 0:
        raise ValueError(f"T_hat={T_hat} must be a multiple of H={H}")
    if kind == "CP" and walkers is not None and calibration is None:
        raise ValueError("CP kind needs a calibration artifact")

    order = sorted(starts, key=str)
    pos = {a: starts[a] for a in order}
    rng = random.Random(f"{seed}:goals")
    queues = {a: list(goal_queues.get(a, [])) for a in order} if goal_queues else {a: [] for a in order}
    reserved = {g for q in queues.values() for g in q}
    served = {a: 0 for a in order}
    consecutive_excl = {a: 0 for a in order}
    window_budget_s = H * 1.0 if window_budget_s is None else window_budget_s

    hist = ObservationHistory()
    if walkers is not None:
        hist.append(walkers.positions)
        for _ in range(warmup):
            hist.append(walkers.step())

    events = []
    window_runtimes = []
    realtime_violations = 0
    collision_steps = 0
    exclusions = 0
    covered_windows = 0
    cp_windows = 0
    run_started = time.perf_counter()

    for t0 in range(0, T_hat, H):
        win_started = time.perf_counter()
        for a in order:
            _ensure_goals(m, rng, queues[a], pos[a], reserved, H)

        obstacles, pred_paths, bundle, sets = build_window_inputs(
            kind if walkers is not None else "IGNORE",
            m, hist, predictor, calibration, t0, H, policy)

        active = list(order)
        excluded = {}
        static_cells = set()
        sol = None
        while active:
            instance = {a: (pos[a], queues[a][0]) for a in active}
            solver_obstacles = obstacles if not static_cells else \
                replace(obstacles, static=obstacles.static | frozenset(static_cells))
            try:
                sol = mapf.solve(m, instance, obstacles=solver_obstacles,
                                 predictions=pred_paths, mode="dua-ecbs", w=w,
                                 horizon=w_hat, t0=t0, time_budget=time_budget,
                                 timestep_cap=timestep_cap, node_limit=node_limit)
                break
            except (PathSearchExhausted, UnsolvableError) as e:
                failed = [e.agent] if e.agent in active else list(active)
                for a in failed:
                    active.remove(a)
                    excluded[a] = str(e)
                    static_cells.add(pos[a])
        exclusions += len(excluded)
        if on_window is not None:
            on_window({"t0": t0, "solution": sol, "interval_sets": sets,
                       "bundle": bundle, "excluded": dict(excluded)})

        for a in order:
            if a in excluded:
                consecutive_excl[a] += 1
                if consecutive_excl[a] >= exclusion_cap:
                    raise DeadlockError({
                        "agent": a, "consecutive_windows": consecutive_excl[a],
                        "window_t0": t0, "position": list(pos[a]),
                        "reason": excluded[a],
                    })
            else:
                consecutive_excl[a] = 0

        window_covered = walkers is not None and kind == "CP" and bundle is not None
        for s in range(1, H + 1):
            t = t0 + s
            prev_ctrl = dict(pos)
            for a in active:
                pos[a] = sol.paths[a].at(t)
            prev_unc = walkers.positions if walkers is not None else {}
            cur_unc = walkers.step() if walkers is not None else {}
            if walkers is not None:
                hist.append(cur_unc)

            step_collisions = []
            for a in order:
                for b, vb in cur_unc.items():
                    if pos[a] == vb:
                        step_collisions.append({"kind": "vertex", "agent": str(a),
                                                "uncontrolled": str(b), "cell": list(pos[a])})
                    elif (pos[a] != prev_ctrl[a] and pos[a] == prev_unc[b]
                          and prev_ctrl[a] == vb):
                        step_collisions.append({"kind": "edge", "agent": str(a),
                                                "uncontrolled": str(b),
                                                "cell": [list(prev_ctrl[a]), list(pos[a])]})
            collision_steps += len(step_collisions)

            if window_covered and bundle is not None:
                for b, vb in cur_unc.items():
                    if nonconformity(bundle.points[b][s - 1], vb) > calibration.intervals.radii[s - 1]:
                        window_covered = False
                        break

            served_now = []
            for a in order:
                if queues[a] and pos[a] == queues[a][0]:
                    goal = queues[a].pop(0)
                    reserved.discard(goal)
                    served[a] += 1
                    served_now.append(str(a))

            events.append({
                "t": t,
                "controlled": {str(a): list(pos[a]) for a in order},
                "uncontrolled": {str(b): list(v) for b, v in cur_unc.items()},
                "collisions": step_collisions,
                "excluded": sorted(str(a) for a in excluded),
                "served": served_now,
            })

        if kind == "CP" and walkers is not None:
            cp_windows += 1
            if window_covered:
                covered_windows += 1

        win_runtime = time.perf_counter() - win_started
        window_runtimes.append(win_runtime)
        if win_runtime > window_budget_s:
            realtime_violations += 1

    total_goals = sum(served.values())
    collisions = collision_steps + exclusions
    metrics = MetricsRecord(
        map_name=map_name or m.name, kind=kind, n_controlled=len(order),
        m_uncontrolled=len(walkers.positions) if walkers is not None else 0,
        delta=delta if delta is not None else (calibration.delta if calibration else None),
        H=H, w_hat=w_hat, seed=seed,
        throughput=total_goals / T_hat, goals_served=total_goals,
        collisions=collisions, collision_steps=collision_steps,
        exclusions=exclusions,
        service_time={str(a): T_hat for a in order},
        makespan=None,
        runtime_s=time.perf_counter() - run_started,
        window_runtime_s=window_runtimes,
        realtime_violations=realtime_violations,
        coverage=covered_windows / cp_windows if cp_windows else None,
    )
    return metrics, events


def _ensure_goals(m, rng, queue, pos, reserved, H):
    """Top up a goal queue until its remaining tour exceeds the window."""
    while True:
        total, anchor = 0.0, pos
        for g in queue:
            total += m.dist(anchor, g)
            anchor = g
        if total > H and queue:
            return
        g = _draw_goal(rng, m, reserved)
        if g is None:
            return
        reserved.add(g)
        queue.append(g)


def metrics_from_events(events, T_hat, H):
    """Re-derive the countable metrics from an event log (replay check)."""
    collision_steps = sum(len(e["collisions"]) for e in events)
    pairs = {((e["t"] - 1) // H, a) for e in events for a in e["excluded"]}
    goals = sum(len(e["served"]) for e in events)
    return {
        "collision_steps": collision_steps,
        "exclusions": len(pairs),
        "collisions": collision_steps + len(pairs),
        "goals_served": goals,
        "throughput": goals / T_hat,
    }
