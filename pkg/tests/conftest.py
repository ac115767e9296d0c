import pytest

from echolab.data import SyntheticSpec, generate


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(n_train=600, n_test=200, skew=[0.9, 0.9], seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def default_data():
    return generate(SyntheticSpec())


def pytest_terminal_summary(terminalreporter):
    from _fixtures import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
