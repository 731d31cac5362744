import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pointdc.cloud import PointCloud
from pointdc.geometry import CameraModel

settings.register_profile("pointdc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pointdc")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, size=64):
    """Camera a few meters from the origin looking roughly at it."""
    eye = rng.normal(size=3)
    eye *= rng.uniform(2.0, 4.0) / np.linalg.norm(eye)
    target = rng.normal(scale=0.2, size=3)
    up = rng.normal(size=3)
    f = rng.uniform(0.5, 1.5) * size
    return CameraModel.look_at(eye, target, f, f, size / 2, size / 2, size, size, up)


def random_cloud(rng, n, labels=None):
    return PointCloud(rng.uniform(-1, 1, (n, 3)), rng.uniform(0, 1, (n, 3)), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the verdict is stored before asserting so
    failures are reported too."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
