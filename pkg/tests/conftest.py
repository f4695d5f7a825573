import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from leakguard.tracegen import GenConfig, generate  # noqa: E402


@pytest.fixture(scope="session")
def small_data():
    return generate(GenConfig(num_apps=6, num_domains=12, packets_per_app=120, seed=7))


@pytest.fixture(scope="session")
def default_data():
    return generate(GenConfig())


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record the PASS/FAIL line for an acceptance criterion, printed again in the terminal summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
