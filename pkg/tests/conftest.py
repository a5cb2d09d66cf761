import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cpmapf.grid import GridMap, make_warehouse


@pytest.fixture(scope="session")
def small_warehouse():
    return make_warehouse("small")


@pytest.fixture()
def open5():
    return GridMap(5, 5, blocked=[], name="open5")


@pytest.fixture()
def open3():
    return GridMap(3, 3, blocked=[], name="open3")


def random_map(rng, height, width, block_prob=0.12):
    """Random connected-ish map; retries until at least one passable cell."""
    while True:
        blocked = [(r, c) for r in range(height) for c in range(width)
                   if rng.random() < block_prob]
        if len(blocked) < height * width:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return GridMap(width, height, blocked, name=f"rand{height}x{width}")
