import pytest

from enersched.catalog import profile_store, default_fleet
from enersched.core import MachineSpec, ProfileStore

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (title, report.outcome)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}")


@pytest.fixture
def table_fleet():
    return default_fleet()


@pytest.fixture
def bench_store(table_fleet):
    return profile_store(table_fleet)


def two_machine_fleet():
    """A frugal slow machine and a fast hungry one, both without startup costs."""
    return [
        MachineSpec("small", cores_per_node=4, idle_power_w=5.0, has_batch_scheduler=False),
        MachineSpec("big", cores_per_node=4, idle_power_w=200.0, has_batch_scheduler=False),
    ]


def store_for(fleet, table):
    store = ProfileStore(fleet)
    for fid, per_machine in table.items():
        for mid, (rt, en) in per_machine.items():
            store.set(fid, mid, rt, en)
    return store
