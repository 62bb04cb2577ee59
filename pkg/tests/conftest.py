import json
import socket
from pathlib import Path

import pytest

from webreason.llm import LLMClient, load_script
from webreason.orchestrator import TaskSpec
from webreason.web import WebAccess

FIXTURES = Path(__file__).parent / "fixtures"
WEB = FIXTURES / "web"
CASES = FIXTURES / "cases"


class NetworkBlocked(AssertionError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Tripwire: any attempt to open a real connection fails the test."""

    def refuse(*args, **kwargs):
        raise NetworkBlocked("network access attempted during tests")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(socket, "getaddrinfo", refuse)


def load_case(name: str) -> dict:
    case = json.loads((CASES / name / "case.json").read_text(encoding="utf-8"))
    case["dir"] = CASES / name
    case["spec"] = TaskSpec.from_dict(case["task"])
    case["recorded"] = (CASES / name / "trajectory.jsonl").read_text(encoding="utf-8").splitlines()[0]
    return case


def replay_clients(name: str):
    """(model, assistant, web, script) served from a recorded case."""
    script = load_script(CASES / name / "transcript.jsonl")
    client = LLMClient(script)
    return client, client, WebAccess.from_fixtures(WEB), script


@pytest.fixture
def web():
    return WebAccess.from_fixtures(WEB)


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[number])
