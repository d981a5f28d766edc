import numpy as np
import pytest

from polarscan.bev import BevSpec
from polarscan.core import GridSpec
from polarscan.scene import SceneConfig, generate_scene

# acceptance results collected for the end-of-run summary
ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}"
    if detail:
        line += f" :: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def small_grid():
    return GridSpec.full_circle(0.0, 16.0, 16, 32, -2.0, 4.0, 8)


@pytest.fixture
def small_bev():
    return BevSpec.square(16.0, 48, -2.0, 4.0, n_z=2)


def small_scene(seed=0, n_points=600, n_objects=4, r_max=15.0, ground_density=0.2):
    cfg = SceneConfig(n_points=n_points, n_objects=n_objects, r_min=2.0, r_max=r_max,
                      ground_density=ground_density, seed=seed)
    return generate_scene(cfg)


def random_cloud(rng, n, r_max=15.0, z=(-2.0, 4.0)):
    r = np.sqrt(rng.uniform(0.25, r_max**2, n))
    th = rng.uniform(-np.pi, np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th), rng.uniform(*z, n), rng.uniform(0, 1, n)], 1)
