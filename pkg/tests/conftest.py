import numpy as np
import pytest

from stagekin import simulator as sim
from stagekin.model import calibrate


@pytest.fixture(scope="session")
def skewed_stage():
    return sim.synthesize_stage(sim.MEASURED_ANGLES, seed=0)


@pytest.fixture(scope="session")
def skewed_dataset(skewed_stage):
    return sim.generate_dataset(skewed_stage)


@pytest.fixture(scope="session")
def skewed_theta(skewed_dataset):
    return calibrate(skewed_dataset)


@pytest.fixture(scope="session")
def ortho_stage():
    return sim.synthesize_stage(sim.ORTHOGONAL_ANGLES, seed=1)


@pytest.fixture(scope="session")
def ortho_theta(ortho_stage):
    return calibrate(sim.generate_dataset(ortho_stage))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
