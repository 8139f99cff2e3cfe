import pytest

from overhauser.model import DotModel, ElectronConfig
from overhauser.rates import RateParams


@pytest.fixture
def dot():
    return DotModel()


@pytest.fixture
def bulk_dot():
    return DotModel(electron=ElectronConfig.absent())


@pytest.fixture
def params(dot):
    return RateParams.for_dot(dot)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
