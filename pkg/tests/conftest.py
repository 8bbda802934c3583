from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_suite(tmp_path_factory):
    """A 16-task validation suite (3 samples per task) on small scenes, generated once."""
    from microeval.taskgen import SceneParams, SplitPlan, generate_suite

    out = tmp_path_factory.mktemp("suite")
    params = SceneParams(width=1600, height=1200, n_objects=24, min_separation=40)
    paths = generate_suite(out, SplitPlan.balanced_validation(3), seed=7, params=params)
    return paths["val"]


_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, name = marker.kwargs["criterion"], marker.kwargs["name"]
    previous = _CRITERIA.get(number, (name, "PASS"))[1]
    status = "PASS" if report.passed and previous == "PASS" else "FAIL"
    _CRITERIA[number] = (name, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, status = _CRITERIA[number]
        terminalreporter.write_line(f"{status}  criterion {number:>2}: {name}")
