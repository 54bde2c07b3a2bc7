import numpy as np
import pytest

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    """Remember the outcome of every test marked ``criterion(n)``."""
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    failed = report.failed
    if report.when == "call" or failed:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _CRITERIA[n] = (status, props.get("title", report.nodeid), props.get("detail", ""))


@pytest.fixture(autouse=True)
def _criterion_properties(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])
        record_property("title", marker.kwargs.get("title", request.node.name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"criterion {n:>2} {status}: {title}"
        terminalreporter.write_line(f"{line} [{detail}]" if detail else line)
