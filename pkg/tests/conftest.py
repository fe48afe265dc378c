from __future__ import annotations

import numpy as np
import pytest

from waveprobe.geometry import boundary_faces, build_domain, build_grid
from waveprobe.potential import sample_potential

SQUARE = {"shape": "rectangle", "x_min": -1.0, "x_max": 1.0, "y_min": -1.0, "y_max": 1.0}
GAUSSIAN = {"kind": "static", "space": {"kind": "gaussian", "width": 0.25}}
BUMP = {"kind": "static", "space": {"kind": "bump", "radius": 0.6}}


@pytest.fixture(scope="session")
def square():
    return build_domain(SQUARE)


@pytest.fixture(scope="session")
def small_grid(square):
    """Coarse grid for solver-level checks (fast)."""
    return build_grid(square, 24, 2.0, 0.9)


@pytest.fixture(scope="session")
def probe_grid(square):
    """Grid with the full time window, large enough for probe pairs."""
    return build_grid(square, 32, 4.0, 0.9)


@pytest.fixture(scope="session")
def faces(square):
    return boundary_faces(square, (1.0, 0.0), 0.5)


@pytest.fixture(scope="session")
def q_gauss(probe_grid):
    return sample_potential(GAUSSIAN, probe_grid, label="q2")


@pytest.fixture(scope="session")
def q_zero(probe_grid):
    return sample_potential({"kind": "zero"}, probe_grid, label="q1")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one status line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
