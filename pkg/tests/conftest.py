from __future__ import annotations

import pytest

from riva.env import Environment, load_scenario
from riva.harness import bundled_scenarios, corpus_path
from riva.spec import load_spec
from riva.toolkit import default_registry


@pytest.fixture
def shop_spec():
    return load_spec(corpus_path("specs", "shop.spec"))


@pytest.fixture
def ping_spec():
    return load_spec(corpus_path("specs", "ping-node.spec"))


@pytest.fixture
def shop_env(shop_spec):
    return Environment(shop_spec, seed=7)


@pytest.fixture
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def scenarios():
    return {p.stem: load_scenario(p) for p in bundled_scenarios()}


# -- acceptance reporting: one line per criterion at the end of the session

_CRITERIA: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        if _CRITERIA.get(name) != "FAIL":
            _CRITERIA[name] = status
    elif report.failed:
        _CRITERIA[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _CRITERIA.items():
        terminalreporter.write_line(f"{status:4}  {name}")
