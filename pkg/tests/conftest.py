import re

import numpy as np
import pytest

from vopr.geometry import RigidTransform
from vopr.ingest import PointCloud

# --- acceptance reporting: one PASS/FAIL line per criterion -------------------

_acceptance_status: dict[int, str] = {}
_acceptance_detail: dict[int, str] = {}


def record_criterion(num: int, detail: str = "") -> None:
    """Called by acceptance tests once their assertions have passed."""
    _acceptance_detail[num] = detail


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m or report.when != "call":
        return
    num = int(m.group(1))
    _acceptance_status[num] = (
        "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    )


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_status:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for num in sorted(_acceptance_status):
        detail = _acceptance_detail.get(num, "")
        line = f"  criterion {num}: {_acceptance_status[num]}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_transform(rng: np.random.Generator, translation_scale: float = 20.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def structured_cloud(rng: np.random.Generator, n: int = 800) -> PointCloud:
    """Ground sheet plus a few wall-like blobs: anisotropic, vertically skewed.

    The height distribution has a heavy upward tail so the principal-frame
    sign disambiguation has a solid signal, like real street scenes.
    """
    n_ground = n // 2
    n_rest = n - n_ground
    ground = np.column_stack(
        [
            rng.uniform(-35, 35, n_ground),
            rng.uniform(-25, 25, n_ground),
            rng.normal(0, 0.15, n_ground),
        ]
    )
    blobs = []
    n_blobs = 4
    per = n_rest // n_blobs
    for b in range(n_blobs):
        center = np.array([rng.uniform(-28, 28), rng.uniform(-18, 18), 0.0])
        size = np.array([rng.uniform(1, 6), rng.uniform(1, 6), rng.uniform(4, 16)])
        count = per if b < n_blobs - 1 else n_rest - per * (n_blobs - 1)
        pts = center + rng.uniform(0, 1, (count, 3)) * size
        blobs.append(pts)
    positions = np.vstack([ground] + blobs)
    intensities = rng.integers(0, 256, len(positions))
    return PointCloud(positions, intensities)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
