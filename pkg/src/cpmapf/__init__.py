"""Multi-agent path finding among dynamic uncontrollable agents.

Bounded-suboptimal search (ECBS) where uncontrollable-agent motion is
predicted, the prediction error is calibrated with split conformal
prediction, and the calibrated uncertainty regions are discretized into
moving vertex obstacles for the solver.
"""

from .grid import Coord, GridMap, MapParseError, load_map, make_warehouse, parse_map

__all__ = [
    "Coord",
    "GridMap",
    "MapParseError",
    "load_map",
    "make_warehouse",
    "parse_map",
]

__version__ = "0.1.0"
