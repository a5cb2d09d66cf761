"""Constrained focal space-time A* over (vertex, timestep) states.

States move one edge (or wait) per timestep with unit cost, so g is fixed by
the timestep and the BFS distance-to-goal heuristic is consistent. The search
keeps two queues: OPEN ordered by f proves the lower bound, FOCAL holds nodes
with f <= w * f_min ordered by how many conflicts the partial path has with
the other agents' paths.

With a conflict horizon w_hat, constraints, obstacles and conflict counting
cover exactly the first w_hat moves (arrivals t0+1..t0+w_hat); past the
horizon the path is finished by an unconstrained shortest-path descent.
"""

import heapq
from itertools import count

import numpy as np

from .types import EDGE, VERTEX, DynamicObstacleSet, Path, PathSearchExhausted

DEFAULT_CAP_FACTOR = 4


class _OtherPath:
    """Flat-index view of another agent's path, padded at both ends."""

    __slots__ = ("t0", "verts", "last_i")

    def __init__(self, m, path):
        self.t0 = path.t0
        self.verts = [m.index(v) for v in path.vertices]
        self.last_i = len(self.verts) - 1

    def at(self, t):
        i = t - self.t0
        if i < 0:
            i = 0
        elif i > self.last_i:
            i = self.last_i
        return self.verts[i]


class _ObstacleView:
    """DynamicObstacleSet converted to flat indices for the inner loop."""

    __slots__ = ("by_time", "static", "final", "end")

    def __init__(self, m, obstacles):
        obstacles = obstacles or DynamicObstacleSet.empty()
        self.by_time = {t: frozenset(m.index(v) for v in s)
                        for t, s in obstacles.by_time.items()}
        self.static = frozenset(m.index(v) for v in obstacles.static)
        self.end = max(self.by_time) if self.by_time else None
        if obstacles.policy == "persist" and self.end is not None:
            self.final = self.by_time[self.end]
        else:
            self.final = frozenset()

    def blocked(self, idx, t):
        if idx in self.static:
            return True
        s = self.by_time.get(t)
        if s is not None:
            return idx in s
        if self.final and t > self.end:
            return idx in self.final
        return False

    def times_blocking(self, idx, t_max):
        """Timesteps <= t_max (inf allowed) at which idx is forbidden.

        Returns (latest_finite_time, blocked_forever).
        """
        latest = None
        if idx in self.static:
            if t_max == np.inf:
                return None, True
            latest = int(t_max)
        for t, s in self.by_time.items():
            if idx in s and t <= t_max and (latest is None or t > latest):
                latest = t
        if idx in self.final:
            if t_max == np.inf:
                return None, True
            latest = int(t_max)
        return latest, False


def low_level_search(m, agent, start, goal, constraints=(), obstacles=None,
                     other_paths=(), w=1.0, horizon=None, t0=0,
                     timestep_cap=None, predictions=()):
    """Plan one agent's path; returns (Path, f_min lower bound).

    other_paths are other controlled agents' paths, padded at their goals for
    conflict counting; predictions count only over their own horizon.
    Raises PathSearchExhausted when no path satisfies the constraints and
    obstacles within the timestep cap.
    """
    if w < 1.0:
        raise ValueError(f"suboptimality factor w={w} must be >= 1")
    if horizon is not None and horizon < 1:
        raise ValueError(f"conflict horizon {horizon} must be >= 1")
    if not m.is_passable(start) or not m.is_passable(goal):
        raise ValueError(f"agent {agent}: start {tuple(start)} or goal {tuple(goal)} not passable")

    cap = timestep_cap if timestep_cap is not None else DEFAULT_CAP_FACTOR * m.n_vertices
    if horizon is not None:
        cap = min(cap, horizon)
    enforce_until = np.inf if horizon is None else t0 + horizon  # arrivals <= this are constrained

    start_i, goal_i = m.index(start), m.index(goal)
    goal_field = m.distance_field(goal)
    if goal_field[start_i] == np.inf:
        raise PathSearchExhausted(agent, f"agent {agent}: goal {tuple(goal)} unreachable from {tuple(start)}")

    # Per-agent constraints, enforced-window only, on flat indices.
    vcons = {}  # t -> set of idx
    econs = set()  # (u, v, depart_t)
    for c in constraints:
        if c.agent != agent:
            continue
        if c.kind == VERTEX and c.timestep <= enforce_until:
            vcons.setdefault(c.timestep, set()).add(m.index(c.vertex))
        elif c.kind == EDGE and c.timestep < enforce_until:
            econs.add((m.index(c.edge[0]), m.index(c.edge[1]), c.timestep))

    obs = _ObstacleView(m, obstacles)

    # Earliest arrival after which the agent may sit at its goal forever.
    latest, forever = obs.times_blocking(goal_i, enforce_until)
    for t, s in vcons.items():
        if goal_i in s and (latest is None or t > latest):
            latest = t
    if forever:
        raise PathSearchExhausted(agent, f"agent {agent}: goal {tuple(goal)} is permanently obstructed")
    goal_clear = t0 if latest is None else latest + 1

    # Frontier time: past it nothing time-varying applies, so the search hands
    # over to a static completion. With a conflict horizon that is the window
    # edge on the plain map; otherwise it is the latest constrained timestep
    # and the completion must stay off persisted/static cells.
    if horizon is not None:
        t_front = t0 + horizon
        comp_field = goal_field
    else:
        t_front = max(t0, goal_clear)
        if vcons:
            t_front = max(t_front, max(vcons) + 1)
        if econs:
            t_front = max(t_front, max(td for _, _, td in econs) + 1)
        if obs.by_time:
            t_front = max(t_front, obs.end + 1)
        banned = obs.final | obs.static
        comp_field = goal_field if not banned else _subgraph_field(m, goal_i, banned)

    nbr = m.neighbors_idx
    seq = count()

    # Conflict avoidance table over the searchable window: padded vertex
    # occupancy per timestep plus reversed moves for swap checks. Controlled
    # paths pad at their goals; predictions stop counting past their horizon.
    vcat = {}
    ecat = {}
    t_cat_end = min(t_front, enforce_until) if np.isfinite(enforce_until) else t_front
    for op, t_stop in ([(_OtherPath(m, p), t_cat_end) for p in other_paths]
                       + [(op, min(op.t0 + op.last_i, t_cat_end))
                          for op in (_OtherPath(m, p) for p in predictions)]):
        prev = op.at(t0)
        for t in range(t0 + 1, int(t_stop) + 1):
            cur = op.at(t)
            row = vcat.get(t)
            if row is None:
                row = vcat[t] = {}
            row[cur] = row.get(cur, 0) + 1
            if cur != prev:
                key = (t, prev, cur)
                ecat[key] = ecat.get(key, 0) + 1
            prev = cur

    def step_conflicts(u, v, ta):
        if ta > enforce_until:
            return 0
        n = 0
        row = vcat.get(ta)
        if row is not None:
            n += row.get(v, 0)
        if u != v and ecat:
            n += ecat.get((ta, v, u), 0)
        return n

    def heur(idx, t):
        # Wait-aware lower bound: the agent cannot settle on its goal before
        # goal_clear, so forced waiting counts toward the remaining cost.
        # (A frontier hand-over on a blocked-through-the-window goal cannot
        # reach the goal state in-window, so this stays admissible.)
        h = goal_field[idx]
        wait = goal_clear - t
        return wait if wait > h else h

    h0 = heur(start_i, t0)
    best_conf = {(start_i, t0): 0}
    parents = {}
    expanded = set()
    open_heap = [(h0, 0, next(seq), start_i, t0)]
    focal_heap = [(0, h0, 0, next(seq), start_i, t0)]

    def clean_open_top():
        while open_heap:
            f, ng, _, idx, t = open_heap[0]
            if (idx, t) in expanded:
                heapq.heappop(open_heap)
            else:
                return f
        return np.inf

    def refill_focal(bound):
        seen = set()
        for f, ng, _, idx, t in open_heap:
            key = (idx, t)
            if f <= bound and key not in seen and key not in expanded:
                seen.add(key)
                heapq.heappush(focal_heap, (best_conf[key], f, ng, next(seq), idx, t))

    terminal = None
    while True:
        f_min = clean_open_top()
        if f_min == np.inf and not focal_heap:
            raise PathSearchExhausted(agent, f"agent {agent}: search exhausted (cap {cap} steps)")
        bound = w * f_min

        node = None
        while focal_heap:
            conf, f, ng, _, idx, t = heapq.heappop(focal_heap)
            key = (idx, t)
            if key in expanded or conf > best_conf.get(key, np.inf):
                continue
            node = (conf, f, idx, t)
            break
        if node is None:
            if f_min == np.inf:
                raise PathSearchExhausted(agent, f"agent {agent}: search exhausted (cap {cap} steps)")
            refill_focal(bound)
            if not focal_heap:
                raise PathSearchExhausted(agent, f"agent {agent}: search exhausted (cap {cap} steps)")
            continue

        conf, f, idx, t = node
        key = (idx, t)

        if idx == goal_i and t >= goal_clear:
            expanded.add(key)
            terminal = (idx, t, f, False)
            break
        if t >= t_front:
            true_f = (t - t0) + comp_field[idx]
            if true_f == np.inf:
                expanded.add(key)  # completion impossible from here
                continue
            if f < true_f - 1e-9:
                # optimistic in-window heuristic: reinsert with the true cost
                heapq.heappush(open_heap, (true_f, -(t - t0), next(seq), idx, t))
                if true_f <= bound:
                    heapq.heappush(focal_heap, (conf, true_f, -(t - t0), next(seq), idx, t))
                continue
            expanded.add(key)
            terminal = (idx, t, true_f, True)
            break
        expanded.add(key)
        if t - t0 >= cap:
            continue

        g_child = t + 1 - t0
        ta = t + 1
        check = ta <= enforce_until
        for v in nbr(idx):
            if check:
                if obs.blocked(v, ta):
                    continue
                vs = vcons.get(ta)
                if vs is not None and v in vs:
                    continue
                if econs and (idx, v, t) in econs:
                    continue
            cv = conf + step_conflicts(idx, v, ta)
            key = (v, ta)
            if key not in expanded and cv < best_conf.get(key, np.inf):
                best_conf[key] = cv
                parents[key] = idx
                fv = g_child + heur(v, ta)
                heapq.heappush(open_heap, (fv, -g_child, next(seq), v, ta))
                if fv <= bound:
                    heapq.heappush(focal_heap, (cv, fv, -g_child, next(seq), v, ta))

    idx, t_end, f_term, frontier = terminal
    verts = []
    cur, t = idx, t_end
    while t > t0:
        verts.append(cur)
        cur = parents[(cur, t)]
        t -= 1
    verts.append(cur)
    verts.reverse()

    if frontier and idx != goal_i:
        # Static completion: greedy descent on the completion distance field.
        cur = idx
        d = comp_field[cur]
        while cur != goal_i:
            for v in nbr(cur)[1:]:
                if comp_field[v] == d - 1:
                    cur = v
                    d -= 1
                    verts.append(cur)
                    break
            else:
                raise AssertionError("distance field descent failed")

    f_min_final = min(clean_open_top(), f_term)
    path = Path(agent=agent, vertices=tuple(m.coord(i) for i in verts), t0=t0)
    assert path.cost == f_term, "path cost must equal its f value"
    return path, int(f_min_final)


def _subgraph_field(m, goal_i, banned):
    """BFS hop distances to goal on the map minus the banned cells."""
    from collections import deque
    field = np.full(m.height * m.width, np.inf)
    field[goal_i] = 0.0
    queue = deque([goal_i])
    while queue:
        u = queue.popleft()
        du = field[u] + 1.0
        for v in m.neighbors_idx(u)[1:]:
            if v not in banned and field[v] == np.inf:
                field[v] = du
                queue.append(v)
    return field
