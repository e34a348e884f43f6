from pathlib import Path

import pytest

from fbdiag.scenarios import build_room_controller, room_controller_profile

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def room():
    return build_room_controller()


@pytest.fixture(scope="session")
def app(room):
    return room[0]


@pytest.fixture(scope="session")
def registry(room):
    return room[1]


@pytest.fixture(scope="session")
def packages(room):
    return room[2]


@pytest.fixture(scope="session")
def profile():
    return room_controller_profile()


# -- acceptance summary: one line per criterion ---------------------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    key = tuple(mark.args)
    item.config.criteria[key] = item.config.criteria.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (number, title), ok in sorted(config.criteria.items()):
        terminalreporter.write_line(f"criterion {number:>2} {title}: {'PASS' if ok else 'FAIL'}")
