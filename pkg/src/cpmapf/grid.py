"""Grid world model: map parsing, graph neighborhoods, shortest-path fields.

Maps are 4-connected unit grids with wait self-loops. Two on-disk formats are
supported: the community ``.map`` text format and a JSON format that also
carries designated task spots.
"""

import json
import threading
import warnings
from collections import OrderedDict, deque
from typing import Iterator, NamedTuple

import numpy as np

PASSABLE_CHARS = frozenset(".G")
BLOCKED_CHARS = frozenset("@OT")

# Default LRU capacity for per-source distance fields.
DIST_CACHE_CAP = 4096


class MapParseError(ValueError):
    """Malformed map input; the message names the offending line/column."""


class Coord(NamedTuple):
    row: int
    col: int


class GridMap:
    """Immutable 4-connected grid graph with blocked cells and task spots.

    Wait actions are modelled as self-loop edges: ``neighbors`` always returns
    the queried vertex first. Distance fields are exact BFS hop counts, cached
    per source behind a lock so a loaded map can be shared across runs.
    """

    def __init__(self, width, height, blocked, task_spots=None, name="",
                 dist_cache_cap=DIST_CACHE_CAP):
        if width <= 0 or height <= 0:
            raise MapParseError(f"non-positive dimensions {height}x{width}")
        self.width = int(width)
        self.height = int(height)
        self.name = name
        self.passable = np.ones((self.height, self.width), dtype=bool)
        for r, c in blocked:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise MapParseError(f"blocked cell ({r},{c}) out of bounds")
            self.passable[r, c] = False
        if not self.passable.any():
            raise MapParseError("map has zero passable cells")

        if task_spots is None:
            spots = {Coord(r, c) for r, c in zip(*np.nonzero(self.passable))}
        else:
            spots = {Coord(int(r), int(c)) for r, c in task_spots}
            for s in spots:
                if not self.is_passable(s):
                    raise MapParseError(f"task spot {tuple(s)} is not passable")
        self.task_spots = frozenset(spots)

        self._nbr = self._build_neighbor_table()
        self._dist_cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._dist_cache_cap = dist_cache_cap
        self._lock = threading.Lock()
        self._check_connected()

    # -- construction helpers -------------------------------------------------

    def _build_neighbor_table(self):
        h, w = self.height, self.width
        table = [()] * (h * w)
        for r in range(h):
            for c in range(w):
                if not self.passable[r, c]:
                    continue
                out = [r * w + c]  # wait self-loop first
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):  # up,down,left,right
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and self.passable[rr, cc]:
                        out.append(rr * w + cc)
                table[r * w + c] = tuple(out)
        return table

    def _check_connected(self):
        start = int(np.flatnonzero(self.passable.ravel())[0])
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in self._nbr[u][1:]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != self.n_vertices:
            warnings.warn(
                f"map {self.name!r}: passable region is not connected "
                f"({len(seen)} of {self.n_vertices} cells reachable)",
                stacklevel=3,
            )

    # -- basic queries ---------------------------------------------------------

    @property
    def n_vertices(self):
        return int(self.passable.sum())

    def in_bounds(self, v) -> bool:
        return 0 <= v[0] < self.height and 0 <= v[1] < self.width

    def is_passable(self, v) -> bool:
        return self.in_bounds(v) and bool(self.passable[v[0], v[1]])

    def index(self, v) -> int:
        return v[0] * self.width + v[1]

    def coord(self, idx: int) -> Coord:
        return Coord(idx // self.width, idx % self.width)

    def neighbors_idx(self, idx: int):
        return self._nbr[idx]

    def neighbors(self, v) -> list[Coord]:
        """Vertex itself (wait edge) plus adjacent passable cells.

        Order is deterministic: self, up, down, left, right.
        """
        if not self.is_passable(v):
            raise ValueError(f"neighbors() queried on blocked/out-of-bounds cell {tuple(v)}")
        return [self.coord(i) for i in self._nbr[self.index(v)]]

    def passable_coords(self) -> Iterator[Coord]:
        for r, c in zip(*np.nonzero(self.passable)):
            yield Coord(int(r), int(c))

    # -- shortest paths ---------------------------------------------------------

    def distance_field(self, src) -> np.ndarray:
        """Exact BFS hop distance from ``src`` to every cell, flat-indexed.

        Unreachable or blocked cells are +inf. Fields are memoized per source
        with LRU eviction beyond the cache cap.
        """
        if not self.is_passable(src):
            raise ValueError(f"distance_field() source {tuple(src)} is not passable")
        key = self.index(src)
        with self._lock:
            field = self._dist_cache.get(key)
            if field is not None:
                self._dist_cache.move_to_end(key)
                return field
        field = np.full(self.height * self.width, np.inf)
        field[key] = 0.0
        queue = deque([key])
        while queue:
            u = queue.popleft()
            du = field[u] + 1.0
            for v in self._nbr[u][1:]:
                if field[v] == np.inf:
                    field[v] = du
                    queue.append(v)
        field.setflags(write=False)
        with self._lock:
            self._dist_cache[key] = field
            if len(self._dist_cache) > self._dist_cache_cap:
                self._dist_cache.popitem(last=False)
        return field

    def dist(self, src, dst) -> float:
        """BFS hop distance between two passable cells (inf if disconnected)."""
        return float(self.distance_field(src)[self.index(dst)])

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        blocked = [[int(r), int(c)] for r, c in zip(*np.nonzero(~self.passable))]
        spots = sorted([int(s.row), int(s.col)] for s in self.task_spots)
        return json.dumps({
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "blocked": blocked,
            "task_spots": spots,
        })

    def to_movingai(self) -> str:
        rows = ["".join("." if self.passable[r, c] else "@" for c in range(self.width))
                for r in range(self.height)]
        header = f"type octile\nheight {self.height}\nwidth {self.width}\nmap\n"
        return header + "\n".join(rows) + "\n"

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and bool(np.array_equal(self.passable, other.passable))
                and self.task_spots == other.task_spots
                and self.name == other.name)

    def __repr__(self):
        return (f"GridMap({self.name!r}, {self.height}x{self.width}, "
                f"{self.n_vertices} passable, {len(self.task_spots)} task spots)")


def _parse_movingai(text: str) -> GridMap:
    lines = text.splitlines()
    if len(lines) < 5:
        raise MapParseError("map text too short: expected 4 header lines plus rows")
    header = {}
    for i, expect in enumerate(("type", "height", "width")):
        parts = lines[i].split()
        if not parts or parts[0] != expect:
            raise MapParseError(f"line {i + 1}: expected '{expect} ...', got {lines[i]!r}")
        header[expect] = parts[1] if len(parts) > 1 else ""
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError:
        raise MapParseError("line 2-3: height/width are not integers") from None
    if lines[3].strip() != "map":
        raise MapParseError(f"line 4: expected 'map', got {lines[3]!r}")
    rows = lines[4:4 + height]
    if len(rows) < height:
        raise MapParseError(f"expected {height} map rows, found {len(rows)}")
    blocked = []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapParseError(f"line {r + 5}: row has {len(row)} cells, expected {width}")
        for c, ch in enumerate(row):
            if ch in BLOCKED_CHARS:
                blocked.append((r, c))
            elif ch not in PASSABLE_CHARS:
                raise MapParseError(f"line {r + 5}, column {c + 1}: unknown cell character {ch!r}")
    return GridMap(width, height, blocked, task_spots=None, name="")


def _parse_json_map(text: str) -> GridMap:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise MapParseError(f"invalid JSON map: {e}") from None
    try:
        return GridMap(obj["width"], obj["height"], obj["blocked"],
                       task_spots=obj.get("task_spots"), name=obj.get("name", ""))
    except KeyError as e:
        raise MapParseError(f"JSON map missing key {e}") from None


def parse_map(text: str) -> GridMap:
    """Parse a map from either format, sniffing JSON by a leading brace."""
    if text.lstrip().startswith("{"):
        return _parse_json_map(text)
    return _parse_movingai(text)


def load_map(path) -> GridMap:
    with open(path) as f:
        return parse_map(f.read())


# -- bundled warehouse layouts ---------------------------------------------------
#
# Shelf rows of 4-cell runs with 1-wide gaps, two-row-wide aisles between
# shelf lines, and an open perimeter. Task spots sit in the open aisle row
# above each shelf line at the gap columns, like pick stations. Sizing keeps
# agent density low enough that ten robots and a handful of walkers do not
# saturate the uncertainty-inflated free space.

_WAREHOUSE_DIMS = {"small": (50, 88), "medium": (58, 108), "large": (66, 128)}


def make_warehouse(size: str = "small") -> GridMap:
    if size not in _WAREHOUSE_DIMS:
        raise ValueError(f"unknown warehouse size {size!r}; choose from {sorted(_WAREHOUSE_DIMS)}")
    height, width = _WAREHOUSE_DIMS[size]
    blocked = []
    shelf_rows = range(2, height - 2, 3)
    for r in shelf_rows:
        for c in range(2, width - 2):
            if (c - 2) % 5 < 4:
                blocked.append((r, c))
    aisle_cols = [1] + [c for c in range(2, width - 2) if (c - 2) % 5 == 4] + [width - 2]
    spots = [(r - 1, c) for r in shelf_rows for c in aisle_cols]
    return GridMap(width, height, blocked, task_spots=spots, name=f"warehouse-{size}")
