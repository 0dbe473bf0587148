from dataclasses import replace

import numpy as np
import pytest

from deformnet.mesh_core import ObjectModel, apply_fixed_region, build_internal_edges
from deformnet.scenes import subdivided_cube, uv_sphere

# lines recorded by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def unit_cube() -> ObjectModel:
    return subdivided_cube(1.0, (0.5, 0.5, 0.5), 1)


def mirror_x(model: ObjectModel) -> ObjectModel:
    p = np.array(model.rest_positions)
    p[:, 0] *= -1.0
    return replace(model, rest_positions=p, triangles=model.triangles[:, ::-1].copy())


def small_pair(center=(0.3, 0.1, -0.75)):
    """66-vertex sphere (k=3, lower half fixed) pressed into a 98-vertex cube
    (upper half fixed)."""
    s = uv_sphere(1.0, center, 8, 8)
    c = subdivided_cube(2.0, (0.0, 0.0, 0.0), 4)
    s = replace(apply_fixed_region(build_internal_edges(s), 2, -1, center[2]), stiffness_k=3.0)
    c = apply_fixed_region(build_internal_edges(c), 2, 1, 0.0)
    return s, c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
