import numpy as np
import pytest

_ACCEPTANCE = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for name, args in getattr(report, "user_properties", []):
        if name == "acceptance":
            number, title = args
            entry = _ACCEPTANCE.setdefault(number, [title, True])
            entry[1] = entry[1] and report.passed
    for name, args in getattr(report, "user_properties", []):
        if name == "acceptance_note":
            number, text = args
            _NOTES.setdefault(number, []).append(text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}")
        for text in _NOTES.get(number, []):
            terminalreporter.write_line(f"        {text}")


@pytest.fixture(autouse=True)
def _acceptance_property(request):
    marker = request.node.get_closest_marker("acceptance")
    if marker is not None:
        request.node.user_properties.append(("acceptance", tuple(marker.args)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
