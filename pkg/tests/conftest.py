import numpy as np
import pytest

from rsdprior.model import Dataset
from rsdprior.simulate import SimConfig, simulate_quarters


def random_dataset(rng, n, C, scale=1.0):
    """Random design with an intercept column and outcomes from a random logit."""
    X = np.column_stack([np.ones(n), rng.normal(size=(n, C - 1))]) if C > 1 else np.ones((n, 1))
    beta = rng.normal(scale=scale, size=C)
    p = 1.0 / (1.0 + np.exp(-(X @ beta)))
    y = (rng.random(n) < p).astype(float)
    return Dataset.from_arrays(X, y), beta


@pytest.fixture(scope="session")
def small_sim():
    return simulate_quarters(SimConfig(n_quarters=3, cases_per_quarter=200, seed=11))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(k, passed, detail)``."""

    def record(k, passed, detail=""):
        line = f"CRITERION {k}: {'PASS' if passed else 'FAIL'} {detail}".rstrip()
        _CRITERIA[k] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
