import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent / "assets"))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    num, text = mark.args
    prev = _CRITERIA.get(num, (text, True))
    _CRITERIA[num] = (text, prev[1] and not rep.failed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        text, ok = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def oracle():
    from symbolic import oracle as _oracle

    return _oracle
