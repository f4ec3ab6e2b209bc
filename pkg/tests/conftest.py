from pathlib import Path

import pytest

from cdkit.dag import load_corpus

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cdkit" / "data" / "fixtures"


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture
def fork3():
    return load_corpus(FIXTURES / "fork3.json")[0]


@pytest.fixture
def chain():
    return load_corpus(FIXTURES / "chain.json")[0]


@pytest.fixture
def diamond():
    return load_corpus(FIXTURES / "diamond.json")[0]


# criterion number -> (passed, summary); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")
