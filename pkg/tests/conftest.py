import numpy as np
import pytest

from advbias.classifier import synth_dataset, train
from advbias.experiments import balanced_cohort

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def train_set():
    return synth_dataset(42, 200)


@pytest.fixture(scope="session")
def test_set():
    return synth_dataset(7, 100)


@pytest.fixture(scope="session")
def model42(train_set):
    return train(train_set, epochs=50, learning_rate=0.05, seed=42)


@pytest.fixture(scope="session")
def model43(train_set):
    return train(train_set, epochs=50, learning_rate=0.05, seed=43)


@pytest.fixture(scope="session")
def cohort(model42, test_set):
    """50 + 50 seed-7 test images the seed-42 model gets right."""
    idx = balanced_cohort(model42, test_set.images, test_set.labels, 100)
    return [test_set.images[i] for i in idx], [test_set.labels[i] for i in idx]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
