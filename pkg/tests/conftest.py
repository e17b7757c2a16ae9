import numpy as np
import pytest

from robglasso.model import toeplitz_example

ACCEPTANCE = []


@pytest.fixture(scope="session")
def toeplitz():
    return toeplitz_example()


@pytest.fixture(scope="session")
def omega_exact():
    return np.array([[4 / 3, -2 / 3, 0.0], [-2 / 3, 5 / 3, -2 / 3], [0.0, -2 / 3, 4 / 3]])


@pytest.fixture
def gate():
    """Record one acceptance verdict; printed in the terminal summary."""

    def record(number, title, ok, detail=""):
        ACCEPTANCE.append((number, title, bool(ok), detail))
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {title}"
        print(line + (f" ({detail})" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number}. {title}" + (f" | {detail}" if detail else ""))
