import math

import numpy as np
import pytest

from omnimvs.geometry import FisheyeCamera, SweepGrid, default_rig


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def small_grid():
    return SweepGrid(8, 32, -math.pi / 4, math.pi / 4, 8, 1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(focal=100.0, pp=(400.0, 400.0), size=(800, 800), fov=math.radians(220),
                rotation=None, translation=(0.0, 0.0, 0.0), name="cam"):
    return FisheyeCamera(focal, pp, size, fov, np.eye(3) if rotation is None else rotation,
                         np.asarray(translation, dtype=float), name)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
