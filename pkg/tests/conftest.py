"""Shared corpus loader."""

from __future__ import annotations

from pathlib import Path

import pytest

from specvet.lang import Policy, Program, parse_policy, parse_program

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def load_example(name: str) -> tuple[Program, Policy]:
    program = parse_program((CORPUS / f"{name}.muasm").read_text())
    policy = parse_policy((CORPUS / f"{name}.policy").read_text())
    return program, policy


@pytest.fixture(scope="session")
def corpus():
    return load_example


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows: dict[str, bool] = {}
    for outcome, ok in (("passed", True), ("failed", False), ("error", False)):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                rows[name] = rows.get(name, True) and ok
    if rows:
        terminalreporter.section("acceptance")
        for name in sorted(rows):
            terminalreporter.write_line(f"{name}: {'PASS' if rows[name] else 'FAIL'}")
