from importlib import resources

import pytest
import yaml

from drtwelfare.aggregate import solve
from drtwelfare.network import solve_network
from drtwelfare.scenario import load_scenario, parse_scenario


def fixture_text(name: str) -> str:
    return (resources.files("drtwelfare") / "fixtures" / f"{name}.yaml").read_text()


def fixture_doc(name: str) -> dict:
    return yaml.safe_load(fixture_text(name))


def from_doc(doc: dict):
    return parse_scenario(yaml.safe_dump(doc, sort_keys=False))


@pytest.fixture(scope="session")
def agg_file():
    return load_scenario("aggregate-table1")


@pytest.fixture(scope="session")
def net_file():
    return load_scenario("network-table1")


@pytest.fixture(scope="session")
def agg(agg_file):
    return agg_file.model


@pytest.fixture(scope="session")
def net(net_file):
    return net_file.model


@pytest.fixture(scope="session")
def agg_solution(agg_file):
    return solve(agg_file.model, agg_file.options)


@pytest.fixture(scope="session")
def net_solution(net_file):
    return solve_network(net_file.model, net_file.options)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, title: str, checks: dict[str, bool]):
        failed = [name for name, ok in checks.items() if not ok]
        line = title if not failed else f"{title} (failed: {', '.join(failed)})"
        ACCEPTANCE[number] = ("PASS" if not failed else "FAIL", line)
        assert not failed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, line = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {line}")
