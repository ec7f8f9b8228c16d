import numpy as np
import pytest

from shforge.body_model import toy_model
from shforge.camera import intrinsics_from_physical
from shforge.scene_sampler import AssetBanks

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(scope="session")
def model():
    return toy_model()


@pytest.fixture(scope="session")
def banks():
    return AssetBanks()


@pytest.fixture(scope="session")
def intr():
    return intrinsics_from_physical()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
