import numpy as np
import pytest

from epipolar_attention.geometry import CameraExtrinsics, CameraIntrinsics, CameraPose


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_pose(R=None, T=None, K=None, frame=0):
    K = K or CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
    R = np.eye(3) if R is None else R
    T = np.zeros(3) if T is None else T
    return CameraPose(K, CameraExtrinsics(R, T), frame)


@pytest.fixture
def rectified_pair():
    """Identity intrinsics, camera j shifted along x: F is [e_x]_x."""
    return make_pose(), make_pose(T=np.array([1.0, 0.0, 0.0]), frame=1)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Yields a recorder; the criterion's PASS/FAIL line is printed at the end of the run."""
    info = {}

    def record(number, title, detail=""):
        info.update(number=number, title=title, detail=detail)

    yield record
    if info:
        rep = getattr(request.node, "rep_call", None)
        status = "PASS" if rep is not None and rep.passed else "FAIL"
        line = f"criterion {info['number']}: {status}  {info['title']}"
        if info["detail"]:
            line += f"  ({info['detail']})"
        request.config._acceptance_lines.append(line)
        print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
