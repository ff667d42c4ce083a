import numpy as np
import pytest

from afbench.mesh import MeshSample, sdf_to_surface
from afbench.synthetic import CaseSpec, generate

# PASS/FAIL lines appended by the acceptance suite, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)


def polygon_sample(points, targets=None, interior=None):
    """A sample whose surface is the CCW polygon through ``points``.

    ``interior`` adds extra (non-surface) nodes. No triangles.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    extra = np.zeros((0, 2)) if interior is None else np.asarray(interior, dtype=float)
    pos = np.concatenate([pts, extra])
    mask = np.zeros(len(pos), bool)
    mask[:n] = True
    edges = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    sdf = np.zeros(len(pos))
    if len(extra):
        probe = MeshSample(pos, 1.0, 0.0, np.zeros(len(pos)), mask, np.zeros((len(pos), 4)),
                           np.zeros((0, 3)), edges)
        sdf = sdf_to_surface(pos, probe)
        sdf[:n] = 0.0
    if targets is None:
        targets = np.zeros((len(pos), 4))
    return MeshSample(pos, 1.0, 0.0, sdf, mask, targets, np.zeros((0, 3)), edges)


def circle_points(n, radius=1.0):
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(t), np.sin(t)])


@pytest.fixture(scope="session")
def couette():
    return generate(CaseSpec("couette", u_inf=1.0, scale=1.0, n_surface=16, n_volume=200))


@pytest.fixture(scope="session")
def cylinder():
    return generate(CaseSpec("cylinder_potential", u_inf=1.0, circulation=1.0, n_surface=64,
                             n_volume=600, seed=3))
