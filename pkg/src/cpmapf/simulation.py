"""Uncontrolled-agent simulation, trajectory datasets, baselines, metrics.

The walkers run A* to uniformly drawn task spots and never react to
controlled agents: step() is a function of the walker state and its own rng
only, which is what makes their trajectory distribution independent of the
planner and lets one seed produce identical traces under every baseline.
"""

import csv
import json
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path as FSPath

import numpy as np

from .grid import Coord, GridMap, load_map, make_warehouse
from .prediction import DEFAULT_WINDOW, ObservationHistory


@dataclass
class MetricsRecord:
    """Per-run metrics shared by the one-shot and lifelong harnesses."""

    map_name: str
    kind: str
    n_controlled: int
    m_uncontrolled: int
    delta: object
    H: int
    w_hat: object
    seed: object
    throughput: float
    goals_served: int
    collisions: int
    collision_steps: int
    exclusions: int
    service_time: dict
    makespan: object
    runtime_s: float
    window_runtime_s: list
    realtime_violations: int
    coverage: object

    @property
    def violation(self) -> int:
        return 1 if self.collisions > 0 else 0

    def strip_timing(self):
        self.runtime_s = 0.0
        self.window_runtime_s = [0.0] * len(self.window_runtime_s)
        return self

    def to_row(self):
        return {
            "map": self.map_name, "kind": self.kind,
            "n_controlled": self.n_controlled, "m_uncontrolled": self.m_uncontrolled,
            "delta": self.delta, "H": self.H, "w_hat": self.w_hat, "seed": self.seed,
            "throughput": self.throughput, "collisions": self.collisions,
            "violations": self.violation, "runtime_s": self.runtime_s,
            "coverage": self.coverage if self.coverage is not None else "",
        }


RESULT_COLUMNS = ["map", "kind", "n_controlled", "m_uncontrolled", "delta", "H",
                  "w_hat", "seed", "throughput", "collisions", "violations",
                  "runtime_s", "coverage"]


def write_results_csv(records, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(r.to_row())


class WalkerSim:
    """Uncontrolled agents walking A* paths to random task spots.

    On reaching a goal (or drawing one equal to the current cell) the agent
    waits that step and draws a fresh random spot on the next. Walkers may
    overlap each other; those overlaps are logged, not prevented.
    """

    REDRAW_RETRIES = 10

    def __init__(self, m, n_agents, seed, starts=None):
        self.m = m
        self.rng = random.Random(f"{seed}:walkers")
        if starts is None:
            starts = spawn_cells(m, n_agents, self.rng)
        if len(starts) != n_agents:
            raise ValueError(f"expected {n_agents} starts, got {len(starts)}")
        self._pos = {b: Coord(*starts[b]) for b in range(n_agents)}
        self._route = {b: [] for b in range(n_agents)}
        self.overlaps = 0
        self._spots = sorted(m.task_spots)

    @property
    def positions(self):
        return dict(self._pos)

    def _new_route(self, b):
        cur = self._pos[b]
        for _ in range(self.REDRAW_RETRIES):
            goal = self._spots[self.rng.randrange(len(self._spots))]
            d = self.m.dist(cur, goal)
            if d != np.inf:
                if d == 0:
                    return []  # drew the current cell: wait this step
                field_ = self.m.distance_field(goal)
                route = []
                v = cur
                while v != goal:
                    for u in self.m.neighbors(v)[1:]:
                        if field_[self.m.index(u)] == field_[self.m.index(v)] - 1:
                            v = u
                            route.append(u)
                            break
                return route
        return []  # every draw unreachable: wait

    def step(self):
        """Advance every agent one edge (or wait); purely (state, rng)-driven."""
        for b in sorted(self._pos):
            if not self._route[b]:
                self._route[b] = self._new_route(b)
            if self._route[b]:
                self._pos[b] = self._route[b].pop(0)
        cells = list(self._pos.values())
        self.overlaps += len(cells) - len(set(cells))
        return self.positions


class TraceReplay:
    """Replays a fixed sequence of uncontrolled positions; holds the last frame."""

    def __init__(self, frames):
        if not frames:
            raise ValueError("trace must contain at least one frame")
        self._frames = [dict(f) for f in frames]
        self._i = 0

    @property
    def positions(self):
        return dict(self._frames[self._i])

    def step(self):
        self._i = min(self._i + 1, len(self._frames) - 1)
        return self.positions


def spawn_cells(m, n, rng, avoid=()):
    """Distinct random passable cells that are not task spots."""
    pool = [v for v in sorted(m.passable_coords())
            if v not in m.task_spots and v not in set(avoid)]
    if len(pool) < n:
        raise ValueError(f"map has {len(pool)} spawn cells, need {n}")
    return rng.sample(pool, n)


# -- trajectory datasets ------------------------------------------------------


@dataclass
class TrajectoryDataset:
    map_name: str
    m_agents: int
    T: int
    seed: object
    positions: list  # per trajectory: np.ndarray (T, m_agents, 2)
    splits: dict

    def frames(self, i):
        """Trajectory i as a list of {agent: Coord} frames."""
        traj = self.positions[i]
        return [{b: Coord(int(traj[t, b, 0]), int(traj[t, b, 1]))
                 for b in range(self.m_agents)} for t in range(traj.shape[0])]


def generate_dataset(m, m_agents, d, T, seed, splits=(0.7, 0.1, 0.1, 0.1)):
    """d independent walker rollouts with fresh random starts and goals.

    Splits are contiguous by trajectory index: train, val, test, cal.
    """
    if d < 10:
        raise ValueError(f"need at least 10 trajectories, got {d}")
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ValueError(f"split fractions {splits} must sum to 1")
    trajectories = []
    for i in range(d):
        sim = WalkerSim(m, m_agents, seed=f"{seed}:{i}")
        traj = np.zeros((T, m_agents, 2), dtype=np.int16)
        frame = sim.positions
        for t in range(T):
            for b in range(m_agents):
                traj[t, b] = frame[b]
            if t + 1 < T:
                frame = sim.step()
        trajectories.append(traj)
    n_train = int(splits[0] * d)
    n_val = int(splits[1] * d)
    n_test = int(splits[2] * d)
    split_map = {
        "train": list(range(0, n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n_train + n_val + n_test)),
        "cal": list(range(n_train + n_val + n_test, d)),
    }
    return TrajectoryDataset(map_name=m.name, m_agents=m_agents, T=T, seed=seed,
                             positions=trajectories, splits=split_map)


def save_dataset(ds, path):
    """JSON-lines trajectories plus a sidecar split manifest."""
    path = FSPath(path)
    with open(path, "w") as f:
        for i, traj in enumerate(ds.positions):
            f.write(json.dumps({"traj_id": i, "positions": traj.tolist()}) + "\n")
    manifest = {"map": ds.map_name, "m_agents": ds.m_agents, "T": ds.T,
                "seed": str(ds.seed), "splits": ds.splits}
    with open(path.with_suffix(path.suffix + ".splits.json"), "w") as f:
        json.dump(manifest, f)


def load_dataset(path):
    path = FSPath(path)
    positions = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            positions.append(np.asarray(rec["positions"], dtype=np.int16))
    with open(path.with_suffix(path.suffix + ".splits.json")) as f:
        manifest = json.load(f)
    return TrajectoryDataset(map_name=manifest["map"], m_agents=manifest["m_agents"],
                             T=manifest["T"], seed=manifest["seed"],
                             positions=positions, splits=manifest["splits"])


def build_instances(ds, indices, predictor, m, H, anchors, seed,
                    window=DEFAULT_WINDOW):
    """One (predictions, actuals) instance per trajectory.

    Each instance draws an anchor time uniformly from ``anchors``, feeds the
    windowed history up to it through the predictor, and pairs the output
    with the true next H frames.
    """
    rng = random.Random(f"{seed}:anchors")
    anchors = list(anchors)
    out = []
    for i in indices:
        frames = ds.frames(i)
        tau = anchors[rng.randrange(len(anchors))]
        if tau + H >= len(frames):
            raise ValueError(f"trajectory {i}: anchor {tau}+H={H} exceeds length {len(frames)}")
        hist = ObservationHistory()
        for t in range(max(0, tau - window + 1), tau + 1):
            hist.append(frames[t])
        bundle = predictor(hist, m, H)
        actuals = {b: [(float(frames[tau + 1 + h][b][0]), float(frames[tau + 1 + h][b][1]))
                       for h in range(H)] for b in range(ds.m_agents)}
        out.append((bundle.points, actuals))
    return out


# -- scenarios and baselines ---------------------------------------------------


def resolve_map(name_or_path) -> GridMap:
    """A map file path, or a bundled layout name like ``warehouse-small``."""
    p = FSPath(name_or_path)
    if p.exists():
        return load_map(p)
    s = str(name_or_path)
    if s.startswith("warehouse-"):
        return make_warehouse(s[len("warehouse-"):])
    return load_map(p)  # raises FileNotFoundError naming the path


@dataclass
class ScenarioConfig:
    map: str = "warehouse-small"
    n_controlled: int = 10
    m_uncontrolled: int = 5
    delta: float = 0.05
    H: int = 10
    w_hat: int = 10
    w: float = 1.5
    T_hat: int = 100
    seed: int = 0
    predictor: str = "astar"
    calibration_path: str = ""
    kind: str = "CP"
    policy: str = "persist"
    warmup: int = DEFAULT_WINDOW - 1
    time_budget: object = None
    window_budget_s: object = None
    mission_radius: object = None  # one-shot only: max start-to-goal distance
    node_limit: object = None  # constraint-tree expansion cap per solve
    T: object = None  # one-shot mission horizon (path length cap)

    def validate(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta {self.delta} must be in (0, 1)")
        if self.H > self.w_hat:
            raise ValueError(f"H={self.H} must not exceed w_hat={self.w_hat}")
        if self.w < 1.0:
            raise ValueError(f"w={self.w} must be >= 1")
        return self

    def to_json(self):
        return json.dumps(self.__dict__)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        unknown = set(obj) - set(known)
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**known).validate()


def controlled_starts(m, n, seed, avoid=()):
    rng = random.Random(f"{seed}:starts")
    return {a: v for a, v in enumerate(spawn_cells(m, n, rng, avoid))}


def run_baseline(kind, scenario, calibration=None):
    """One lifelong run under a baseline kind; seeds shared across kinds so
    starts, goals, and walker traces are identical and only the obstacle
    construction differs."""
    from . import planner  # deferred: planner imports MetricsRecord from here
    from .conformal import CalibrationArtifact
    from .prediction import make_predictor

    scenario.validate()
    m = resolve_map(scenario.map)
    starts = controlled_starts(m, scenario.n_controlled, scenario.seed)
    walkers = (WalkerSim(m, scenario.m_uncontrolled, scenario.seed)
               if scenario.m_uncontrolled > 0 else None)
    predictor = make_predictor(scenario.predictor)
    if calibration is None and kind == "CP" and scenario.m_uncontrolled > 0:
        calibration = CalibrationArtifact.load(scenario.calibration_path)
    metrics, events = planner.run_closed_loop(
        m, starts, walkers, predictor, calibration,
        w=scenario.w, w_hat=scenario.w_hat, H=scenario.H, T_hat=scenario.T_hat,
        seed=scenario.seed, kind=kind, policy=scenario.policy,
        warmup=scenario.warmup, time_budget=scenario.time_budget,
        window_budget_s=scenario.window_budget_s, map_name=m.name,
        delta=scenario.delta, node_limit=scenario.node_limit)
    return metrics, events


def run_open_loop_trial(scenario, calibration=None):
    """One-shot run: plan once against warmed-up observations, then execute
    the plan to completion against the live walkers, counting collisions."""
    from . import planner
    from .conformal import CalibrationArtifact
    from .prediction import make_predictor
    import time

    scenario.validate()
    m = resolve_map(scenario.map)
    seed = scenario.seed
    starts = controlled_starts(m, scenario.n_controlled, seed)
    rng = random.Random(f"{seed}:goals")
    spots = sorted(m.task_spots)
    agents = {}
    taken = set()
    for a in sorted(starts):
        pool = [s for s in spots if s not in taken]
        if scenario.mission_radius is not None:
            near = [s for s in pool
                    if 1 <= m.dist(starts[a], s) <= scenario.mission_radius]
            pool = near or pool  # fall back to any free spot
        goal = pool[rng.randrange(len(pool))]
        taken.add(goal)
        agents[a] = (starts[a], goal)

    walkers = (WalkerSim(m, scenario.m_uncontrolled, seed)
               if scenario.m_uncontrolled > 0 else None)
    hist = ObservationHistory()
    if walkers is not None:
        hist.append(walkers.positions)
        for _ in range(scenario.warmup):
            hist.append(walkers.step())
        if calibration is None:
            calibration = CalibrationArtifact.load(scenario.calibration_path)
    predictor = make_predictor(scenario.predictor)

    started = time.perf_counter()
    result = planner.solve_open_loop(m, agents, hist, predictor, calibration,
                                     w=scenario.w, t0=0, policy=scenario.policy,
                                     time_budget=scenario.time_budget,
                                     node_limit=scenario.node_limit,
                                     timestep_cap=scenario.T)
    plan_runtime = time.perf_counter() - started

    sol = result.solution
    t_end = max(p.end_t for p in sol.paths.values())
    pos = {a: sol.paths[a].at(0) for a in agents}
    cur_unc = walkers.positions if walkers is not None else {}
    collision_steps = 0
    events = []
    for t in range(1, t_end + 1):
        prev_ctrl = dict(pos)
        pos = {a: sol.paths[a].at(t) for a in agents}
        prev_unc = cur_unc
        cur_unc = walkers.step() if walkers is not None else {}
        step_collisions = []
        for a in agents:
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
        events.append({"t": t,
                       "controlled": {str(a): list(v) for a, v in pos.items()},
                       "uncontrolled": {str(b): list(v) for b, v in cur_unc.items()},
                       "collisions": step_collisions, "excluded": [], "served": []})

    metrics = MetricsRecord(
        map_name=m.name, kind="CP", n_controlled=scenario.n_controlled,
        m_uncontrolled=scenario.m_uncontrolled, delta=scenario.delta,
        H=calibration.H if calibration else scenario.H, w_hat=None, seed=seed,
        throughput=len(agents) / max(1, t_end), goals_served=len(agents),
        collisions=collision_steps, collision_steps=collision_steps, exclusions=0,
        service_time={str(a): sol.paths[a].cost for a in agents},
        makespan=t_end, runtime_s=plan_runtime, window_runtime_s=[plan_runtime],
        realtime_violations=0, coverage=None)
    return metrics, events, result


def aggregate(records, keys):
    """Group records by the named fields; mean/median/max of the metrics."""
    if not records:
        raise ValueError("no records to aggregate")
    groups = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    rows = []
    for gkey in sorted(groups, key=str):
        rs = groups[gkey]
        row = dict(zip(keys, gkey))
        row["n"] = len(rs)
        for name, values in (
                ("throughput", [r.throughput for r in rs]),
                ("collisions", [r.collisions for r in rs]),
                ("runtime_s", [r.runtime_s for r in rs])):
            row[f"{name}_mean"] = statistics.fmean(values)
            row[f"{name}_median"] = statistics.median(values)
            row[f"{name}_max"] = max(values)
        row["violation_rate"] = statistics.fmean(r.violation for r in rs)
        cov = [r.coverage for r in rs if r.coverage is not None]
        row["coverage_mean"] = statistics.fmean(cov) if cov else ""
        rows.append(row)
    return rows
