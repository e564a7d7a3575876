import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
ECHO_SHIM = HERE / "shims" / "echo_shim.py"
sys.path.insert(0, str(HERE))


@pytest.fixture
def echo_shim_command():
    return f"{sys.executable} {ECHO_SHIM}"


# -- one PASS/FAIL line per acceptance criterion ---------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    n, title = marker.args
    if call.when == "setup" and call.excinfo is None:
        return
    if call.excinfo is None:
        outcome = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        outcome = "NOT GATED"
    else:
        outcome = "FAIL"
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if outcome == "NOT GATED" and not detail:
        detail = str(call.excinfo.value)
    _criteria[n] = (outcome, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcome, title, detail = _criteria[n]
        line = f"criterion {n:>2} {outcome:<9} {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
