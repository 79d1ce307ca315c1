import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minerva.encoding import hash_name, set_hash  # noqa: E402


@pytest.fixture(autouse=True)
def _default_hash():
    """Simulations switch the process-wide digest; restore it around each test."""
    before = hash_name()
    set_hash("sha3_256")
    yield
    set_hash(before)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
