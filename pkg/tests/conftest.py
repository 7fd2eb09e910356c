"""Shared test constants and fixtures.

The default scenario used across the suite: a 2 km^2 square area with the
gateway hovering at 300 m, either above the center or above a corner.
"""

import numpy as np
import pytest

from flyora.channel import Position3D

SIDE_M = 1414.2135623730951          # sqrt(2 km^2)
AREA = (SIDE_M, SIDE_M)
CENTER = Position3D(SIDE_M / 2.0, SIDE_M / 2.0, 300.0)
CORNER = Position3D(0.0, 0.0, 300.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
