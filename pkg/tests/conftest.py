import numpy as np
import pytest

from memamp.harness import ExperimentConfig, generate_problem
from memamp.operator import StructuredSpec, build_structured


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_spec():
    """The 2x4, kappa=4 operator: sigma^2 = (3.2, 0.8)."""
    return StructuredSpec(2, 4, 4.0, "dct", permutation_seed=3)


@pytest.fixture
def identity_op():
    return build_structured(StructuredSpec(16, 16, 1.0, "dct", permutation_seed=None))


@pytest.fixture(scope="session")
def small_problem():
    cfg = ExperimentConfig(m=256, n=512, kappa=10.0, T=20, seed=11)
    return cfg, generate_problem(cfg)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
