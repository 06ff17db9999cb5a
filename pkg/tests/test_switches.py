import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lvsysid.exceptions import IncompleteMeasurement
from lvsysid.grid import CLOSED, OPEN
from lvsysid.pipeline import topology_states
from lvsysid.simulate import NPMU, NoiseModel, measure, profiles_for_grid, simulate
from lvsysid.switches import (
    SwitchStateDetector,
    count_switch_errors,
    default_epsilon,
    detect_switch_state,
    identify_topology,
)

series = arrays(np.float64, (12, 3), elements=st.floats(0, 50))


def test_zero_currents_open():
    z = np.zeros((10, 3))
    assert detect_switch_state(z, z, 0.1) == OPEN


def test_one_phase_at_twice_epsilon_closed():
    a = np.zeros((10, 3))
    a[:, 1] = 2 * 0.3
    assert detect_switch_state(a, np.zeros((10, 3)), 0.3, window=10) == CLOSED


def test_missing_phase_and_short_series():
    with pytest.raises(IncompleteMeasurement):
        detect_switch_state(np.zeros((10, 2)), np.zeros((10, 2)), 0.1)
    with pytest.raises(IncompleteMeasurement):
        detect_switch_state(np.zeros((5, 3)), np.zeros((5, 3)), 0.1, window=10)
    nan = np.zeros((5, 3))
    nan[2, 0] = np.nan
    with pytest.raises(IncompleteMeasurement):
        detect_switch_state(nan, np.zeros((5, 3)), 0.1)


@given(series, series, arrays(np.float64, (12, 3), elements=st.floats(0, 10)), st.floats(0.01, 5))
def test_monotone_in_currents(a, b, extra, eps):
    if detect_switch_state(a, b, eps) == CLOSED:
        assert detect_switch_state(a + extra, b, eps) == CLOSED


@given(series, series, st.floats(0.01, 5), st.floats(0.01, 100))
def test_scale_covariance(a, b, eps, k):
    # compare on the exact decision quantity to avoid boundary rounding
    total = np.maximum(a, b).sum()
    if abs(total - eps * a.shape[0]) > 1e-9 * max(1.0, total):
        assert detect_switch_state(a, b, eps) == detect_switch_state(k * a, k * b, k * eps)


def test_pure_noise_never_closed():
    # noise at 3 sigma = 0.5 % of a 100 A rating on a dead junction, one-day windows
    noise = NoiseModel(0.005, 0.005)
    eps = default_epsilon(noise)
    sd = noise.current_noise_floor()
    rng = np.random.default_rng(0)
    false_closed = 0
    for _ in range(10):
        w = np.abs(rng.standard_normal((1000, 1440, 3)) * sd)
        stat = w.sum(axis=(1, 2))  # i_in and i_out draws are the same magnitude scale
        false_closed += int(np.sum(stat >= eps * 1440))
        false_closed += detect_switch_state(w[0], w[1], eps) == CLOSED
    assert false_closed == 0


def test_noiseless_tree_topology(grid, tree_npmu, tree_states):
    assert identify_topology(grid, tree_npmu) == tree_states


def test_meshed_topology_under_noise(grid, meshed_sim, meshed_states):
    noise = NoiseModel(0.005, 0.005, seed=3)
    m = measure(meshed_sim, noise, NPMU)
    det = SwitchStateDetector(noise=noise).fit(grid, m)
    assert count_switch_errors(det.states_, meshed_states) == 0
    assert all(d.threshold == det.epsilon_ for d in det.decisions_.values())


def test_deenergized_spur_needs_long_window(grid):
    # J23 open: subsystem V is dead; a closed J10 with a quiet first step
    # is misread with a one-step window but not with the full day
    states = topology_states(grid, "tree", {"J23": OPEN})
    profs = profiles_for_grid(grid, dt=60, T=1440, seed=2)
    for p in profs:
        if p.node in {"11", "12", "13", "14"}:
            p.p[:600] = 0.0
            p.q[:600] = 0.0
    m = measure(simulate(grid, profs, states), kind=NPMU)
    short = identify_topology(grid, m, window=1)
    full = identify_topology(grid, m)
    assert short["J10"] == OPEN
    assert full == states
