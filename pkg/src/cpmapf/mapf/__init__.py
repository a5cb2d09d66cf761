from .high_level import (assert_solution_sound, classify_conflict,
                         constraints_from_conflict, count_conflicts,
                         detect_first_conflict, iter_conflicts, solve)
from .low_level import low_level_search
from .types import (CONTROLLED, EDGE, INTERVAL, PREDICTED, VERTEX, Conflict,
                    Constraint, DynamicObstacleSet, Party, Path,
                    PathSearchExhausted, Solution, UnsolvableError)

__all__ = [
    "CONTROLLED", "PREDICTED", "INTERVAL", "VERTEX", "EDGE",
    "Path", "Constraint", "Conflict", "Party", "DynamicObstacleSet",
    "Solution", "UnsolvableError", "PathSearchExhausted",
    "low_level_search", "solve", "detect_first_conflict", "iter_conflicts",
    "count_conflicts", "classify_conflict", "constraints_from_conflict",
    "assert_solution_sound",
]
