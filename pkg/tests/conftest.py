import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def heavy(rng, n, d, df=3.0):
    """Student t sample, the default heavy-tailed test input."""
    return rng.standard_t(df, size=(n, d))


ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Remember one acceptance verdict; all of them are printed at the end of the run."""
    ACCEPTANCE_LINES.append(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
