import numpy as np
import pytest
from hypothesis import settings

from infercost.datasets import generate

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("default")

np.seterr(all="raise", under="ignore")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}")


@pytest.fixture(scope="session")
def small_data():
    return generate(200, 10, 0, 3.0, seed=1)
