import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from corrode.config import preset
from corrode.mesh import build_unit_square_mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_unit_square_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return build_unit_square_mesh(16)


@pytest.fixture(scope="session")
def mesh32():
    return build_unit_square_mesh(32)


@pytest.fixture(scope="session")
def flagship_run():
    """Noiseless z^3 reconstruction on the n=32 square; shared by the inverse and acceptance tests."""
    from corrode.experiments import run_reconstruct
    return run_reconstruct(preset("flagship"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
