import numpy as np
import pytest

from trunccluster.core import Dataset
from trunccluster.datagen import BirchSpec, generate_birch

# lines appended by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def birch25():
    data, centers = generate_birch(BirchSpec(grid_side=5, samples_per_cluster=100, rng_seed=1))
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n, d, scale=3.0):
    return Dataset(rng.normal(scale=scale, size=(n, d)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
