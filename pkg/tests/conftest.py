from pathlib import Path

import pytest

from tevc import ir

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"


def load(name: str) -> ir.Program:
    return ir.parse_program((PROGRAMS / f"{name}.tev").read_text())


@pytest.fixture
def program():
    return load


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
