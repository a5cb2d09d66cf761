"""Independent reference implementations used to cross-check the library.

Everything here recomputes results from first principles (raw passability
arrays, exhaustive enumeration, textbook formulas) rather than calling the
code paths under test.
"""

import heapq
import math


def dijkstra_dist(m, src):
    """Single-source shortest hop counts via Dijkstra on the raw grid array."""
    dist = {tuple(src): 0}
    heap = [(0, tuple(src))]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[(r, c)]:
            continue
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < m.height and 0 <= cc < m.width and m.passable[rr, cc]:
                if d + 1 < dist.get((rr, cc), math.inf):
                    dist[(rr, cc)] = d + 1
                    heapq.heappush(heap, (d + 1, (rr, cc)))
    return dist


def enumerate_best_cost(m, start, goal, vertex_cons, edge_cons, max_len):
    """Optimal single-agent arrival time by exhaustive walk enumeration.

    vertex_cons: set of ((r, c), t) forbidden occupancies.
    edge_cons: set of ((r1, c1), (r2, c2), t) forbidden departures at t.
    A walk of arrival time T is valid if it also never violates a vertex
    constraint on the goal at any later time <= max_len (wait-at-goal rule).
    """
    goal = tuple(goal)
    latest_goal_block = max((t for (v, t) in vertex_cons if v == goal), default=-1)
    best = [math.inf]

    def moves(r, c):
        yield r, c
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < m.height and 0 <= cc < m.width and m.passable[rr, cc]:
                yield rr, cc

    def walk(v, t):
        if t >= best[0]:
            return
        if v == goal and t > latest_goal_block:
            best[0] = t
            return
        if t == max_len:
            return
        for u in moves(*v):
            if (u, t + 1) in vertex_cons:
                continue
            if (v, u, t) in edge_cons:
                continue
            walk(u, t + 1)

    walk(tuple(start), 0)
    return best[0]


def joint_optimal_cost(m, starts, goals, node_cap=2_000_000):
    """Exact minimal sum of service times via joint-space A*.

    States carry per-agent positions plus done flags; a done agent has
    committed to sitting at its goal (it stops paying but keeps occupying the
    cell). Each transition costs one per agent that is not yet done.
    """
    n = len(starts)
    starts = tuple(tuple(s) for s in starts)
    goals = tuple(tuple(g) for g in goals)
    fields = [dijkstra_dist(m, g) for g in goals]

    def moves(r, c):
        out = [(r, c)]
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < m.height and 0 <= cc < m.width and m.passable[rr, cc]:
                out.append((rr, cc))
        return out

    def h(positions, done):
        return sum(fields[i][positions[i]] for i in range(n) if not done[i])

    start_state = (starts, (False,) * n)
    best = {start_state: 0}
    heap = [(h(starts, (False,) * n), 0, start_state)]
    popped = 0
    while heap:
        f, g, (positions, done) = heapq.heappop(heap)
        if g > best.get((positions, done), math.inf):
            continue
        popped += 1
        if popped > node_cap:
            raise RuntimeError("joint-space oracle exceeded its node cap")
        if all(done):
            return g
        choices = []
        for i in range(n):
            if done[i]:
                choices.append([(positions[i], True, 0)])
            else:
                opts = [(u, False, 1) for u in moves(*positions[i])]
                if positions[i] == goals[i]:
                    opts.append((positions[i], True, 0))
                choices.append(opts)

        def product(idx, acc_pos, acc_done, acc_cost):
            if idx == n:
                state = (tuple(acc_pos), tuple(acc_done))
                ng = g + acc_cost
                if ng < best.get(state, math.inf):
                    best[state] = ng
                    heapq.heappush(heap, (ng + h(state[0], state[1]), ng, state))
                return
            for (u, d, cost) in choices[idx]:
                ok = True
                for j in range(idx):
                    if acc_pos[j] == u:  # vertex conflict
                        ok = False
                        break
                    if acc_pos[j] == positions[idx] and positions[j] == u:  # swap
                        ok = False
                        break
                if ok:
                    product(idx + 1, acc_pos + [u], acc_done + [d], acc_cost + cost)

        product(0, [], [], 0)
    return math.inf


def brute_discretize(m, radii, points, current):
    """All-vertices double-clause check: within the step radius of some
    agent's prediction AND within h hops of that same agent's position."""
    hop_fields = {b: dijkstra_dist(m, current[b]) for b in current}
    out = []
    for h in range(1, len(radii) + 1):
        cells = set()
        for r in range(m.height):
            for c in range(m.width):
                if not m.passable[r, c]:
                    continue
                for b in points:
                    pr, pc = points[b][h - 1]
                    close = math.hypot(pr - r, pc - c) <= radii[h - 1]
                    reachable = hop_fields[b].get((r, c), math.inf) <= h
                    if close and reachable:
                        cells.add((r, c))
                        break
        out.append(cells)
    return out


def split_cp_quantile(scores, delta):
    """Textbook split conformal quantile: the ceil((n+1)(1-delta))-th order
    statistic, infinity when the rank exceeds the sample."""
    n = len(scores)
    rank = math.ceil((n + 1) * (1 - delta))
    if rank > n:
        return math.inf
    return sorted(scores)[rank - 1]


def count_pair_collisions(paths_by_agent):
    """Brute-force controlled-controlled conflict scan over padded paths."""
    agents = sorted(paths_by_agent, key=str)
    t_end = max(p.end_t for p in paths_by_agent.values())
    t0 = min(p.t0 for p in paths_by_agent.values())
    found = 0
    for i, a in enumerate(agents):
        for b in agents[i + 1:]:
            pa, pb = paths_by_agent[a], paths_by_agent[b]
            for t in range(t0, t_end + 1):
                if pa.at(t) == pb.at(t):
                    found += 1
                if t < t_end and pa.at(t) != pa.at(t + 1) and \
                        pa.at(t) == pb.at(t + 1) and pa.at(t + 1) == pb.at(t):
                    found += 1
    return found
