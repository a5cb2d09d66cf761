"""Split conformal calibration of multi-step prediction errors.

Per-step scores are the max prediction error over the uncontrolled agents.
A first calibration half fixes per-step normalization constants, a second
half supplies the quantile, and the resulting per-step radii jointly cover
a fresh trajectory's errors with probability at least 1 - delta.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

QUANTILE_FLOOR = 1e-6


@dataclass(frozen=True)
class NonconformityRecord:
    """Per-horizon-step max-over-agents prediction errors of one instance."""

    instance_id: int
    scores: tuple

    def __post_init__(self):
        for s in self.scores:
            if not (math.isfinite(s) and s >= 0.0):
                raise ValueError(f"instance {self.instance_id}: score {s} must be finite and >= 0")


@dataclass(frozen=True)
class AlphaWeights:
    values: tuple

    def __post_init__(self):
        for a in self.values:
            if not (math.isfinite(a) and a > 0.0):
                raise ValueError(f"normalization constant {a} must be finite and > 0")


@dataclass(frozen=True)
class CPIntervals:
    """Calibrated per-step radii; entries may be +inf when cal2 is too small
    for the requested delta (the appended infinity was selected).

    ``c_hat`` and ``scale`` keep the scaled-domain threshold the radii came
    from. Scores on grids tie exactly at the quantile, so coverage checks
    compare alpha*score against c_hat (the very arithmetic calibration used)
    instead of score against c_hat/alpha, which double-rounds.
    """

    radii: tuple
    delta: float
    cal2_size: int
    c_hat: float = None
    scale: tuple = None

    @property
    def horizon(self):
        return len(self.radii)

    def covers(self, scores) -> bool:
        if self.c_hat is not None and self.scale is not None:
            return max(a * s for a, s in zip(self.scale, scores)) <= self.c_hat
        return all(s <= c for s, c in zip(scores, self.radii))


def nonconformity(pred, actual) -> float:
    """Euclidean prediction error between a predicted and a true position."""
    return math.hypot(pred[0] - actual[0], pred[1] - actual[1])


def score_calibration_set(cal, H, m_agents):
    """Score instances: per step, the max error over all m agents.

    ``cal`` is a list of (predictions, actuals) pairs, each a mapping
    agent -> sequence of H 2-D points.
    """
    records = []
    for i, (preds, actuals) in enumerate(cal):
        if len(preds) != m_agents or len(actuals) != m_agents:
            raise ValueError(f"instance {i}: expected {m_agents} agents, "
                             f"got {len(preds)} predicted / {len(actuals)} actual")
        scores = []
        for h in range(H):
            worst = 0.0
            for b in preds:
                if b not in actuals:
                    raise ValueError(f"instance {i}: agent {b} missing from actuals")
                if len(preds[b]) != H or len(actuals[b]) != H:
                    raise ValueError(f"instance {i}: agent {b} has "
                                     f"{len(preds[b])}/{len(actuals[b])} steps, expected {H}")
                worst = max(worst, nonconformity(preds[b][h], actuals[b][h]))
            scores.append(worst)
        records.append(NonconformityRecord(i, tuple(scores)))
    return records


def split_records(records, shuffle_seed=None):
    """Deterministic 50/50 split by instance index; optional seeded shuffle."""
    records = list(records)
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        records = [records[i] for i in rng.permutation(len(records))]
    half = len(records) // 2
    return records[:half], records[half:]


def conformal_rank(n: int, delta: float) -> int:
    """The ceil((n+1)(1-delta)) rank of split conformal prediction."""
    return math.ceil((n + 1) * (1.0 - delta))


def compute_alphas(cal1, delta, floor=QUANTILE_FLOOR):
    """Per-step normalization constants from the first calibration half.

    Default routine: the reciprocal of each step's conformal-rank quantile,
    floored to keep the constants finite when a step has all-zero errors.
    Any positive constants computed from cal1 alone preserve the coverage
    guarantee, so alternative routines can be swapped in via the
    ``alpha_routine`` hook of ``run_calibration``.
    """
    if not cal1:
        raise ValueError("cal1 is empty")
    if len(cal1) < 10:
        raise ValueError(f"cal1 has {len(cal1)} instances; need at least 10")
    H = len(cal1[0].scores)
    rank = min(conformal_rank(len(cal1), delta), len(cal1))
    values = []
    for h in range(H):
        step = sorted(r.scores[h] for r in cal1)
        q = max(step[rank - 1], floor)
        values.append(1.0 / q)
    return AlphaWeights(tuple(values))


def calibrate(cal2, alphas, delta):
    """Quantile step: scale scores, take the per-instance max across steps,
    sort with an appended infinity, and pick the conformal rank."""
    if not cal2:
        raise ValueError("cal2 is empty")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta {delta} must lie in (0, 1)")
    H = len(alphas.values)
    scaled = []
    for r in cal2:
        if len(r.scores) != H:
            raise ValueError(f"instance {r.instance_id}: {len(r.scores)} steps, expected {H}")
        scaled.append(max(a * s for a, s in zip(alphas.values, r.scores)))
    scaled.sort()
    scaled.append(math.inf)
    p = conformal_rank(len(cal2), delta)
    c_hat = scaled[p - 1]
    radii = tuple(c_hat / a for a in alphas.values)
    return CPIntervals(radii=radii, delta=delta, cal2_size=len(cal2),
                       c_hat=c_hat, scale=tuple(alphas.values))


def empirical_coverage(test, intervals):
    """Fraction of instances whose scores fall within the radii at every step."""
    covered = sum(1 for r in test if intervals.covers(r.scores))
    return covered / len(test)


@dataclass(frozen=True)
class CalibrationArtifact:
    """Calibration output consumed by the solver, with provenance metadata."""

    intervals: CPIntervals
    alphas: AlphaWeights
    method: str = "quantile-fallback"
    map_name: str = ""
    predictor: str = ""

    @property
    def H(self):
        return self.intervals.horizon

    @property
    def delta(self):
        return self.intervals.delta

    def to_json(self) -> str:
        out = {
            "delta": self.delta,
            "H": self.H,
            "alphas": list(self.alphas.values),
            "C": list(self.intervals.radii),
            "cal2_size": self.intervals.cal2_size,
            "method": self.method,
            "map": self.map_name,
            "predictor": self.predictor,
        }
        if self.intervals.c_hat is not None:
            out["c_hat"] = self.intervals.c_hat
            out["scale"] = list(self.intervals.scale)
        return json.dumps(out)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        intervals = CPIntervals(radii=tuple(float(c) for c in obj["C"]),
                                delta=float(obj["delta"]),
                                cal2_size=int(obj["cal2_size"]),
                                c_hat=obj.get("c_hat"),
                                scale=tuple(obj["scale"]) if "scale" in obj else None)
        if len(obj["alphas"]) != obj["H"] or len(obj["C"]) != obj["H"]:
            raise ValueError("calibration artifact: alphas/C length does not match H")
        return cls(intervals=intervals,
                   alphas=AlphaWeights(tuple(float(a) for a in obj["alphas"])),
                   method=obj.get("method", "quantile-fallback"),
                   map_name=obj.get("map", ""),
                   predictor=obj.get("predictor", ""))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())


def run_calibration(records, delta, shuffle_seed=None, alpha_routine=None,
                    method="quantile-fallback", map_name="", predictor=""):
    """Full calibration pass over scored instances; returns the artifact."""
    cal1, cal2 = split_records(records, shuffle_seed)
    routine = alpha_routine or compute_alphas
    alphas = routine(cal1, delta)
    intervals = calibrate(cal2, alphas, delta)
    return CalibrationArtifact(intervals=intervals, alphas=alphas, method=method,
                               map_name=map_name, predictor=predictor)
