"""Shared fixtures: small grids, operators, and synthesized data.

Everything here is deterministic; session scope keeps the repeated operator
assembly out of the per-test cost.
"""

import numpy as np
import pytest

from refltomo.forward import WavefieldSet, solve_total_field, synthesize_data
from refltomo.greens import build_all_operators
from refltomo.scene import (
    FrequencySchedule,
    default_acquisition,
    layered_phantom,
    square_grid,
)


@pytest.fixture(scope="session")
def acq():
    return default_acquisition()


@pytest.fixture(scope="session")
def grid8():
    return square_grid(8)


@pytest.fixture(scope="session")
def sched3():
    """Three well-separated frequencies: 30, 150, 600 MHz."""
    return FrequencySchedule(np.array([30e6, 150e6, 600e6]))


@pytest.fixture(scope="session")
def ops8(grid8, acq, sched3):
    """Operators for all three frequencies on the 8x8 grid."""
    return build_all_operators(grid8, acq, sched3)


@pytest.fixture(scope="session")
def layered8(grid8):
    return layered_phantom(8, 0.5)


@pytest.fixture(scope="session")
def fields8(layered8, ops8):
    """Total fields of the 8x8 layered scene at every frequency."""
    U = WavefieldSet()
    for op in ops8:
        U.merge(solve_total_field(op, layered8, tol=1e-12))
    return U


@pytest.fixture(scope="session")
def data8(layered8, ops8, fields8):
    """Noiseless scattered data of the 8x8 layered scene."""
    return synthesize_data(ops8, layered8, fields8)
