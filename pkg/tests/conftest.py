import numpy as np
import pytest

from rangediff.core import AngularFov, ImageGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sphere_geom():
    """Full azimuth, full polar range: the 128 x 512 LiDAR layout."""
    return ImageGeometry(512, 128, AngularFov(-np.pi, np.pi, 0.0, np.pi, 0.0, 100.0))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# --- acceptance reporting -------------------------------------------------------

ACCEPTANCE = {}


def record(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
