import numpy as np
import pytest

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_configurations(rng, n, l0=1.3):
    return np.column_stack([
        rng.uniform(-5, 5, n), rng.uniform(-5, 5, n),
        rng.uniform(-np.pi, np.pi, n), rng.uniform(-np.pi, np.pi, n),
        rng.uniform(0.05, l0, n),
    ])
