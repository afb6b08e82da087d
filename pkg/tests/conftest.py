import numpy as np
import pytest

from mvmotion.phantom import PhantomConfig, generate

SMALL = dict(dims=(32, 32, 20), spacing=(3.0, 3.0, 4.8), center_mm=(48.0, 48.0, 60.0), frames=4)


@pytest.fixture(scope="session")
def small_study():
    return generate(PhantomConfig(**SMALL))


@pytest.fixture(scope="session")
def default_study():
    return generate(PhantomConfig(seed=0))


@pytest.fixture(scope="session")
def clean_study():
    return generate(PhantomConfig(seed=0, noise_sigma=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
