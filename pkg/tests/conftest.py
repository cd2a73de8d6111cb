import numpy as np
import pytest
from hypothesis import settings, strategies as st
from scipy.spatial.transform import Rotation

from artikin.se3 import Pose

settings.register_profile("artikin", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("artikin")

finite = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)


@st.composite
def poses(draw, scale=2.0):
    p = [draw(st.floats(-scale, scale, allow_nan=False)) for _ in range(3)]
    q = np.array([draw(st.floats(-1.0, 1.0, allow_nan=False)) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return Pose(np.array(p), q)


def matrix_oracle(pose: Pose) -> np.ndarray:
    """4x4 homogeneous matrix built with scipy (scalar-last quaternions)."""
    w, x, y, z = pose.orientation
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = pose.position
    return m


def pose_from_oracle(m: np.ndarray) -> Pose:
    x, y, z, w = Rotation.from_matrix(m[:3, :3]).as_quat()
    return Pose(m[:3, 3], np.array([w, x, y, z]))


def assert_pose_close(a: Pose, b: Pose, tol=1e-9):
    np.testing.assert_allclose(a.position, b.position, atol=tol)
    # double cover: compare up to sign
    d = min(np.abs(a.orientation - b.orientation).max(), np.abs(a.orientation + b.orientation).max())
    assert d < tol, (a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for k in sorted(report):
            terminalreporter.write_line(report[k])
