"""Multi-step position prediction for uncontrolled agents.

Built-in predictors are pure functions of the observation window; a learned
predictor can be attached as a child process speaking line-delimited JSON on
stdin/stdout. Predictions are continuous 2-D points; snapping onto the graph
happens later, in the planner.
"""

import json
import math
import queue
import subprocess
import threading
import warnings
from dataclasses import dataclass, field

DEFAULT_WINDOW = 4
DEFAULT_DEADLINE_S = 1.0
DEFAULT_STARTUP_DEADLINE_S = 20.0


class PredictionError(RuntimeError):
    pass


class ProtocolTransportError(PredictionError):
    """Child process died or its pipes broke."""


class ProtocolDeadlineError(PredictionError):
    """The predictor missed its response deadline."""


class ProtocolSchemaError(PredictionError):
    """The predictor answered with a malformed or mismatched record."""


@dataclass
class ObservationHistory:
    """Observed positions of each uncontrolled agent up to the current step."""

    obs: dict = field(default_factory=dict)  # agent -> list of Coord

    @property
    def agents(self):
        return sorted(self.obs, key=str)

    @property
    def length(self):
        return min((len(v) for v in self.obs.values()), default=0)

    def append(self, positions):
        for b, v in positions.items():
            self.obs.setdefault(b, []).append(v)

    def current(self):
        return {b: vs[-1] for b, vs in self.obs.items()}

    def window(self, k=DEFAULT_WINDOW):
        """Sliding window of the last k observations per agent."""
        return ObservationHistory({b: list(vs[-k:]) for b, vs in self.obs.items()})


@dataclass(frozen=True)
class PredictionBundle:
    """H future 2-D points per uncontrolled agent, issued at timestep t."""

    horizon: int
    points: dict  # agent -> list of (row, col) floats
    issued_at: int = 0

    def __post_init__(self):
        for b, pts in self.points.items():
            if len(pts) != self.horizon:
                raise ValueError(f"agent {b}: {len(pts)} points, expected horizon {self.horizon}")
            for p in pts:
                if not (math.isfinite(p[0]) and math.isfinite(p[1])):
                    raise ValueError(f"agent {b}: non-finite prediction point {p}")

    def clamped(self, m):
        """Clamp every point into [0, height) x [0, width)."""
        out = {}
        for b, pts in self.points.items():
            out[b] = [(min(max(p[0], 0.0), m.height - 1.0),
                       min(max(p[1], 0.0), m.width - 1.0)) for p in pts]
        return PredictionBundle(self.horizon, out, self.issued_at)


def _check_horizon(H):
    if H < 1:
        raise ValueError(f"prediction horizon H={H} must be >= 1")


def predict_constant(hist, H):
    """Repeat each agent's last observed position across the horizon."""
    _check_horizon(H)
    if not hist.obs or hist.length < 1:
        raise ValueError("cannot predict from an empty observation history")
    t = hist.length - 1
    points = {b: [(float(vs[-1][0]), float(vs[-1][1]))] * H for b, vs in hist.obs.items()}
    return PredictionBundle(H, points, issued_at=t)


def _greedy_descent(m, src, field_):
    """Shortest path src -> field source by descending a BFS distance field."""
    path = [src]
    cur, d = src, field_[m.index(src)]
    while d > 0:
        for v in m.neighbors(cur)[1:]:
            if field_[m.index(v)] == d - 1:
                cur, d = v, d - 1
                path.append(cur)
                break
        else:  # disconnected; stay put
            break
    return path


def predict_astar_goal(hist, m, H):
    """Impute a task-spot goal per agent and roll the shortest path toward it.

    The goal is the task spot closest (graph distance) to the agent's
    extrapolated position: its last position advanced one step along its last
    move direction. Spots are assigned distinct greedily in agent-id order;
    once every spot is taken the remaining agents reuse the nearest one.
    Agents sit at the goal once the path runs out.
    """
    _check_horizon(H)
    if not hist.obs or hist.length < 1:
        raise ValueError("cannot predict from an empty observation history")
    if not m.task_spots:
        warnings.warn("map has no task spots; falling back to constant-position prediction")
        return predict_constant(hist, H)

    spots = sorted(m.task_spots)
    taken = set()
    points = {}
    for b in hist.agents:
        vs = hist.obs[b]
        cur = vs[-1]
        ahead = cur
        if len(vs) >= 2:
            dr, dc = cur[0] - vs[-2][0], cur[1] - vs[-2][1]
            cand = (cur[0] + dr, cur[1] + dc)
            if (dr, dc) != (0, 0) and m.is_passable(cand):
                ahead = cand
        free = [s for s in spots if s not in taken] or spots
        goal = min(free, key=lambda s: (m.dist(ahead, s), s))
        taken.add(goal)
        walk = _greedy_descent(m, cur, m.distance_field(goal))[1:]
        if len(walk) < H:  # sit at the goal (or where the descent stalled)
            pad = walk[-1] if walk else cur
            walk += [pad] * (H - len(walk))
        points[b] = [(float(v[0]), float(v[1])) for v in walk[:H]]
    return PredictionBundle(H, points, issued_at=hist.length - 1)


class ExternalPredictor:
    """Handle to a child-process predictor speaking the line-JSON protocol.

    One request is in flight at a time; callers wanting parallelism open one
    handle per run. The child greets with a hello record at startup and is
    told to shut down when the handle closes.
    """

    def __init__(self, cmd, deadline_s=DEFAULT_DEADLINE_S,
                 startup_deadline_s=DEFAULT_STARTUP_DEADLINE_S):
        self.cmd = list(cmd)
        self.deadline_s = deadline_s
        self._lock = threading.Lock()
        self._lines = queue.Queue()
        try:
            self._proc = subprocess.Popen(self.cmd, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as e:
            raise ProtocolTransportError(f"failed to start predictor {self.cmd}: {e}") from e
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        hello = self._read_record(startup_deadline_s)
        if hello.get("type") != "hello":
            raise ProtocolSchemaError(f"expected hello handshake, got {hello!r}")
        self.model = hello.get("model", "")
        self.history_len = int(hello.get("history_len", DEFAULT_WINDOW))

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)  # EOF sentinel

    def _read_record(self, deadline):
        try:
            line = self._lines.get(timeout=deadline)
        except queue.Empty:
            raise ProtocolDeadlineError(
                f"predictor did not answer within {deadline:.3f}s") from None
        if line is None:
            raise ProtocolTransportError("predictor closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolSchemaError(f"predictor sent invalid JSON: {line!r}") from e

    def _send(self, record):
        if self._proc.poll() is not None:
            raise ProtocolTransportError(f"predictor exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(record) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ProtocolTransportError(f"failed to write to predictor: {e}") from e

    def predict(self, hist, H, t=None):
        _check_horizon(H)
        if hist.length < 1:
            raise ValueError("cannot predict from an empty observation history")
        t = hist.length - 1 if t is None else t
        agents = hist.agents
        request = {
            "type": "predict",
            "t": int(t),
            "H": int(H),
            "history": {str(b): [[float(v[0]), float(v[1])] for v in hist.obs[b]]
                        for b in agents},
        }
        with self._lock:
            self._send(request)
            resp = self._read_record(self.deadline_s)
        if resp.get("type") != "prediction" or "predictions" not in resp:
            raise ProtocolSchemaError(f"unexpected response record: {resp!r}")
        preds = resp["predictions"]
        if set(preds) != {str(b) for b in agents}:
            raise ProtocolSchemaError(
                f"response agents {sorted(preds)} do not match request {sorted(map(str, agents))}")
        points = {}
        for b in agents:
            pts = preds[str(b)]
            if len(pts) != H:
                raise ProtocolSchemaError(f"agent {b}: {len(pts)} points, expected H={H}")
            try:
                points[b] = [(float(p[0]), float(p[1])) for p in pts]
            except (TypeError, ValueError, IndexError) as e:
                raise ProtocolSchemaError(f"agent {b}: malformed point list") from e
        try:
            return PredictionBundle(H, points, issued_at=t)
        except ValueError as e:
            raise ProtocolSchemaError(str(e)) from e

    def close(self):
        if self._proc.poll() is None:
            try:
                self._send({"type": "shutdown"})
            except ProtocolTransportError:
                pass
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._proc.stdin:
            self._proc.stdin.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def predict_external(hist, H, endpoint, t=None):
    """Forward the window to an attached external predictor."""
    return endpoint.predict(hist, H, t)


def make_predictor(spec, window=DEFAULT_WINDOW):
    """Build a predict(hist, m, H) callable from a config string.

    Specs: "constant", "astar", or "external:<shell command>". Built-ins fall
    back gracefully: the astar predictor needs only one observation (a single
    observation means a degenerate, stationary heading).
    """
    if spec == "constant":
        return lambda hist, m, H: predict_constant(hist.window(window), H)
    if spec == "astar":
        return lambda hist, m, H: predict_astar_goal(hist.window(window), m, H)
    if spec.startswith("external:"):
        import shlex
        endpoint = ExternalPredictor(shlex.split(spec[len("external:"):]))
        def _predict(hist, m, H, _ep=endpoint):
            return predict_external(hist.window(window), H, _ep).clamped(m)
        _predict.endpoint = endpoint
        return _predict
    raise ValueError(f"unknown predictor spec {spec!r}")
