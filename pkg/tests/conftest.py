import pytest
from hypothesis import settings

from brwlab.model import BrwModel, OffspringLaw, build_simple_kernel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


def pure_birth(d: int, beta: float, kappa: float = 1.0) -> BrwModel:
    """Simple walk with the law b2 = beta (so b1 = -beta)."""
    return BrwModel(build_simple_kernel(d, kappa), OffspringLaw.from_rates({2: beta}))


@pytest.fixture
def d1_model():
    return pure_birth(1, 0.5)
