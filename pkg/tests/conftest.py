import pytest

from pistop.hjb_solver import SolverConfig, extract_boundary, solve_optimal, solve_policy

SEED = 20201

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def optimal_table():
    return solve_optimal(SolverConfig())


@pytest.fixture(scope="session")
def boundary(optimal_table):
    return extract_boundary(optimal_table)


@pytest.fixture(scope="session")
def policy_tables():
    cache = {}

    def get(b):
        if b not in cache:
            cache[b] = solve_policy(b, SolverConfig(), check_residual=False)
        return cache[b]

    return get


@pytest.fixture(scope="session")
def coarse_config():
    return SolverConfig(step=1e-3, n_max=120)
