import pytest

from faultforge.harness import bundled_harness

BAC_INPUT = {"a1": [0, 1, 2, 3], "a2": [4, 5, 6, 7], "size": 4}


@pytest.fixture(scope="session")
def bac_v1():
    return bundled_harness("bac_v1")


@pytest.fixture(scope="session")
def bac_v2():
    return bundled_harness("bac_v2")


@pytest.fixture(scope="session")
def vp4():
    return bundled_harness("vp4")


@pytest.fixture(scope="session")
def fu_toy():
    return bundled_harness("fu_toy")


@pytest.fixture(scope="session")
def bac_v1_analysis(bac_v1):
    return bac_v1.explore()


@pytest.fixture(scope="session")
def bac_v2_analysis(bac_v2):
    return bac_v2.explore()


# One line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
