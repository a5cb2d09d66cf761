"""Value types shared by the low- and high-level searches."""

import json
from dataclasses import dataclass, field
from typing import Optional, Union

from ..grid import Coord

# Conflict party tags.
CONTROLLED = "controlled"
PREDICTED = "uncontrolled-prediction"
INTERVAL = "cp-interval-vertex"

VERTEX = "vertex"
EDGE = "edge"


@dataclass(frozen=True)
class Path:
    """Time-indexed vertex sequence for one agent, starting at timestep t0."""

    agent: object
    vertices: tuple
    t0: int = 0

    def __post_init__(self):
        if not self.vertices:
            raise ValueError(f"path for agent {self.agent} is empty")

    @property
    def end_t(self) -> int:
        return self.t0 + len(self.vertices) - 1

    @property
    def cost(self) -> int:
        """Service time: number of edges up to arrival (waits included)."""
        return len(self.vertices) - 1

    def at(self, t: int) -> Coord:
        """Vertex at absolute timestep t, clamped to both ends.

        Clamping at the tail implements the wait-at-goal rule; clamping at
        the head pins agents to their start before the path begins.
        """
        i = t - self.t0
        if i < 0:
            i = 0
        elif i >= len(self.vertices):
            i = len(self.vertices) - 1
        return self.vertices[i]


@dataclass(frozen=True)
class Constraint:
    """Vertex or edge exclusion for one agent at one timestep.

    Edge constraints use the departure-time convention: the move leaving
    ``edge[0]`` at ``timestep`` and arriving at ``edge[1]`` at ``timestep+1``
    is forbidden.
    """

    agent: object
    kind: str  # VERTEX | EDGE
    timestep: int
    vertex: Optional[Coord] = None
    edge: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == VERTEX:
            if self.vertex is None:
                raise ValueError("vertex constraint without a vertex")
        elif self.kind == EDGE:
            if self.edge is None or len(self.edge) != 2:
                raise ValueError("edge constraint needs a (from, to) pair")
            u, v = self.edge
            if abs(u[0] - v[0]) + abs(u[1] - v[1]) != 1:
                raise ValueError(f"edge constraint endpoints {u}->{v} are not adjacent")
        else:
            raise ValueError(f"unknown constraint kind {self.kind!r}")


@dataclass(frozen=True)
class Party:
    """One side of a conflict: a controlled agent, a predicted uncontrolled
    agent, or an anonymous CP-interval vertex."""

    kind: str  # CONTROLLED | PREDICTED | INTERVAL
    agent: object = None

    @property
    def is_controlled(self) -> bool:
        return self.kind == CONTROLLED


@dataclass(frozen=True)
class Conflict:
    kind: str  # VERTEX | EDGE
    parties: tuple  # (Party, Party)
    location: object  # Coord for vertex; (from, to) as traversed by parties[0] for edge
    timestep: int  # occupancy time for vertex; departure time for edge


@dataclass(frozen=True)
class DynamicObstacleSet:
    """Per-timestep forbidden vertices seen by the low-level search.

    ``by_time`` maps absolute timesteps (contiguous t0+1..t0+H) to vertex
    sets; ``static`` cells are forbidden at every enforced timestep. Beyond
    the last keyed timestep the ``persist`` policy keeps the final set alive
    as a static obstacle, while ``drop`` frees it.
    """

    by_time: dict = field(default_factory=dict)
    static: frozenset = frozenset()
    policy: str = "persist"  # persist | drop

    def __post_init__(self):
        if self.policy not in ("persist", "drop"):
            raise ValueError(f"unknown beyond-horizon policy {self.policy!r}")

    @property
    def horizon_end(self):
        return max(self.by_time) if self.by_time else None

    def blocked(self, v, t: int) -> bool:
        if v in self.static:
            return True
        s = self.by_time.get(t)
        if s is not None:
            return v in s
        end = self.horizon_end
        if self.policy == "persist" and end is not None and t > end:
            return v in self.by_time[end]
        return False

    def max_time(self):
        """Latest timestep with explicit obstacle data (None when empty)."""
        return self.horizon_end

    @classmethod
    def empty(cls):
        return cls()


@dataclass
class Solution:
    """Joint solution with search statistics."""

    paths: dict  # agent -> Path
    cost: int
    lower_bound: int
    expanded: int
    runtime_s: float
    w_final: float

    def to_json(self) -> str:
        return json.dumps({
            "paths": {str(a): [[int(v[0]), int(v[1])] for v in p.vertices]
                      for a, p in sorted(self.paths.items(), key=lambda kv: str(kv[0]))},
            "cost": int(self.cost),
            "expanded": int(self.expanded),
            "runtime_s": float(self.runtime_s),
            "w_final": float(self.w_final),
        })


class UnsolvableError(RuntimeError):
    """Instance has no solution even without dynamic obstacles."""

    def __init__(self, agent, msg):
        super().__init__(msg)
        self.agent = agent


class PathSearchExhausted(RuntimeError):
    """Low level found no path within the timestep cap; carries the agent so
    the rolling-horizon loop can exclude it for the window."""

    def __init__(self, agent, msg):
        super().__init__(msg)
        self.agent = agent
