import numpy as np
import pytest

from lvsysid.grid import decompose_subsystems, load_default_grid
from lvsysid.pipeline import topology_states
from lvsysid.simulate import NPMU, PMU, measure, profiles_for_grid, simulate

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def report_criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail, seconds):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def grid():
    return load_default_grid()


@pytest.fixture(scope="session")
def tree_states(grid):
    return topology_states(grid, "tree")


@pytest.fixture(scope="session")
def meshed_states(grid):
    return topology_states(grid, "meshed")


@pytest.fixture(scope="session")
def tree_subsystems(grid, tree_states):
    return {s.id: s for s in decompose_subsystems(grid, tree_states)}


@pytest.fixture(scope="session")
def tree_sim(grid, tree_states):
    return simulate(grid, profiles_for_grid(grid, dt=60, T=1440, seed=0), tree_states)


@pytest.fixture(scope="session")
def meshed_sim(grid, meshed_states):
    return simulate(grid, profiles_for_grid(grid, dt=60, T=1440, seed=0), meshed_states)


@pytest.fixture(scope="session")
def tree_pmu(tree_sim):
    return measure(tree_sim, kind=PMU)


@pytest.fixture(scope="session")
def tree_npmu(tree_sim):
    return measure(tree_sim, kind=NPMU)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
