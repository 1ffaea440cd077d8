from pathlib import Path

import pytest

from polref.parser import parse_policy

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
EQUIVALENCE_CORPUS = ("corp", "sim4", "sim5", "sim6", "diamond")

_criteria: dict[str, tuple[bool, str]] = {}


def load(name: str):
    return parse_policy((CORPUS / f"{name}.xml").read_bytes())


@pytest.fixture(scope="session")
def corp():
    return load("corp")


@pytest.fixture(scope="session")
def corpus_deployments():
    from polref.refinement import compile_policy

    return {name: compile_policy(load(name)) for name in EQUIVALENCE_CORPUS}


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary."""
    def record(key: str, ok: bool, detail: str = ""):
        _criteria[key] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split()[0])):
        ok, detail = _criteria[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}" + (f": {detail}" if detail else ""))
