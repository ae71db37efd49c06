from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import specfsm  # noqa: E402

TOY_DIR = Path(specfsm.__file__).parent / "data" / "toy"

# criterion number -> (passed, description, elapsed seconds)
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, float]] = {}


@pytest.fixture
def toy_dir() -> Path:
    return TOY_DIR


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, desc, elapsed = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {desc} ({elapsed:.2f}s)")
