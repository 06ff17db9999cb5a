import numpy as np
import pytest
from sklearn.base import clone

from lvsysid.closedform import (
    OFF,
    RAW,
    ClosedFormIdentifier,
    ClosedFormProblem,
    aggregate,
    block_factor,
    problem_from_measurements,
    solve_closed_form,
    solve_inner_qp,
)
from lvsysid.exceptions import NoFeasibleAssignment
from lvsysid.grid import build_graph, decompose_subsystems, true_type_vector
from lvsysid.sequence import positive_sequence
from lvsysid.simulate import NPMU, NoiseModel, measure, profiles_for_grid, simulate
from lvsysid.validation import (
    consistent_closed_form_instance,
    grid_search_inner,
    perturb_closed_form_problem,
    random_closed_form_problem,
    separable_grid_search,
)

# largest per-segment impedance error over the subsystems at zero noise
NO_NOISE_ENVELOPE = 0.0667


def toy_problem(n_s, T=6, seed=0, energies=True):
    return random_closed_form_problem(np.random.default_rng(seed), n_s, T, energies, noise=0.0)[0]


def three_segment_grid():
    return build_graph({
        "slack": {"node": "a", "voltage": 230.0},
        "cable_catalog": [
            {"id": "thick", "r_per_len": 0.208, "x_per_len": 0.08},
            {"id": "thin", "r_per_len": 0.642, "x_per_len": 0.083},
        ],
        "nodes": [
            {"id": "a"},
            {"id": "m1", "loads": [True] * 3},
            {"id": "m2", "loads": [True] * 3},
            {"id": "b", "loads": [True] * 3},
        ],
        "segments": [
            {"id": "s1", "from": "a", "to": "m1", "length": 60, "cable": "thick"},
            {"id": "s2", "from": "m1", "to": "m2", "length": 40, "cable": "thick"},
            {"id": "s3", "from": "m2", "to": "b", "length": 50, "cable": "thin"},
        ],
        "measured_nodes": ["a", "b"],
    })


def test_block_factor_and_aggregate():
    assert block_factor(1440, 96) == 15
    assert block_factor(96, 96) == 1
    assert block_factor(97, 96) == 97
    assert block_factor(10, None) == 1
    assert np.array_equal(aggregate(np.arange(6.0), 3), [1.0, 4.0])


def test_problem_validation():
    good = toy_problem(3)
    with pytest.raises(ValueError):
        ClosedFormProblem(good.dv[:-1], good.i_in, good.i_out, good.v_in, good.v_out, good.lengths,
                          good.z_per_len, good.dt)
    with pytest.raises(ValueError):
        ClosedFormProblem(good.dv, good.i_in, good.i_out, good.v_in, good.v_out, [10.0, 0.0, 5.0],
                          good.z_per_len, good.dt)
    with pytest.raises(ValueError):
        ClosedFormProblem(good.dv, good.i_in, good.i_out, good.v_in, good.v_out, good.lengths,
                          good.z_per_len, good.dt, energies=[1.0])


def test_v_hat_interpolation():
    p = ClosedFormProblem([-1.0], [5.0], [1.0], [231.0], [229.0], [50.0, 50.0], [0.2], 60.0)
    assert p.v_hat()[0, 0] == pytest.approx(230.0)
    p = ClosedFormProblem([-1.0], [5.0], [1.0], [231.0], [229.0], [1e-6, 100.0], [0.2], 60.0)
    assert p.v_hat()[0, 0] == pytest.approx(231.0, abs=1e-6)


def test_v_hat_against_power_flow():
    g = three_segment_grid()
    sim = simulate(g, profiles_for_grid(g, dt=900, T=96, seed=3))
    sub = decompose_subsystems(g)[0]
    v = np.array([np.abs(positive_sequence(sim.node_voltage(n))) for n in sub.path])
    p = ClosedFormProblem(v[-1] - v[0], np.ones(96), np.ones(96), v[0], v[-1], sub.lengths, [0.2], 900.0)
    dev = np.abs(p.v_hat() - v[1:-1])
    seg_drop = np.abs(np.diff(v, axis=0)).max(axis=0)
    assert np.all(dev.max(axis=0) < seg_drop)


def test_single_segment_needs_no_solve():
    p = ClosedFormProblem([-0.5, -1.0], [5.0, 10.0], [5.0, 10.0], [231, 231], [230.5, 230], [100.0], [0.2, 0.6], 60)
    res = solve_inner_qp(p, (0,))
    assert res.objective == pytest.approx(float(np.sum((p.dv + 0.02 * p.i_in) ** 2)))


def test_two_segments_fully_pinned():
    p = toy_problem(2, energies=False)
    z = p.impedances((0, 1))
    res = solve_inner_qp(p, (0, 1), energy_mode=OFF)
    assert res.objective == pytest.approx(float(np.sum((p.dv + z[0] * p.i_in + z[1] * p.i_out) ** 2)))


def test_one_type_catalog_forces_vector():
    p = toy_problem(4)
    p.z_per_len = p.z_per_len[:1]
    sol = solve_closed_form(p)
    assert sol.types == (0, 0, 0, 0)
    assert sol.objective == pytest.approx(solve_inner_qp(p, (0, 0, 0, 0)).objective)


@pytest.mark.parametrize("seed", range(8))
def test_inner_qp_matches_grid_search_with_energy(seed):
    rng = np.random.default_rng(seed)
    p, types = random_closed_form_problem(rng, 3, T=4)
    for cand in {types, (0, 1, 2), (2, 2, 2)}:
        qp = solve_inner_qp(p, cand).objective
        oracle = grid_search_inner(p, cand)
        assert qp == pytest.approx(oracle, rel=1e-4, abs=1e-9)


@pytest.mark.parametrize("n_s,seed", [(3, 0), (3, 1), (4, 2), (4, 3), (4, 4)])
def test_inner_qp_matches_separable_grid_search(n_s, seed):
    rng = np.random.default_rng(100 + seed)
    p, types = random_closed_form_problem(rng, n_s, T=8, with_energy=False, noise=0.05)
    qp = solve_inner_qp(p, types, energy_mode=OFF).objective
    assert qp == pytest.approx(separable_grid_search(p, types), rel=1e-4, abs=1e-9)


def test_consistent_iv_recovery_and_constraints():
    p, truth, cur = consistent_closed_form_instance("IV")
    sol = solve_closed_form(p)
    assert sol.types == truth
    assert sol.ordering_residual >= -1e-8
    assert sol.energy_residual <= 1e-8
    assert np.array_equal(sol.currents[0], p.i_in) and np.array_equal(sol.currents[-1], p.i_out)
    # candidate optimality
    finite = [obj for _, obj, status in sol.candidates if status == "ok"]
    assert len(sol.candidates) == 45 and sol.objective <= min(finite)


def test_three_segment_interior_current_recovered():
    g = three_segment_grid()
    p, truth, cur = consistent_closed_form_instance("I", T=96, grid=g)
    res = solve_inner_qp(p, truth)
    assert np.allclose(res.currents[1], cur[1], rtol=1e-6)


def test_all_candidates_infeasible():
    p = toy_problem(3)
    p.energies = p.energies * 1e6
    with pytest.raises(NoFeasibleAssignment):
        solve_closed_form(p)


def test_energy_sign_flag():
    p = toy_problem(3)
    assert solve_closed_form(p).objective < 1e-12
    p.energy_sign = -1.0
    with pytest.raises(NoFeasibleAssignment):
        solve_closed_form(p)


def test_share_normalization_is_feasible_by_construction():
    p = toy_problem(4)
    q = p.share_normalized()
    # every junction takes its energy share of the boundary current drop
    share = p.energies / p.energies.sum()
    cur = p.i_in[None, :] - np.cumsum(np.r_[0.0, share])[:, None] * (p.i_in - p.i_out)[None, :]
    assert np.abs(q.energy_residual(cur)).max() < 1e-12
    assert q.ordering_residual(cur) >= 0


def test_estimator_api(grid):
    est = ClosedFormIdentifier(grid.catalog, max_steps=48)
    assert clone(est).get_params()["max_steps"] == 48


def test_measured_tree_within_envelope(grid, tree_npmu, tree_subsystems):
    for sid, sub in tree_subsystems.items():
        est = ClosedFormIdentifier(grid.catalog).fit(sub, tree_npmu)
        truth = true_type_vector(sub, grid.catalog)
        z_true = grid.catalog.z_per_len[list(truth)] * sub.lengths / 1000.0
        assert np.max(np.abs(est.impedances_ / z_true - 1)) <= NO_NOISE_ENVELOPE, sid
        assert est.solution_.ordering_residual >= -1e-8


def test_raw_reading_noise_one_percent(grid, tree_sim, tree_subsystems):
    sub = tree_subsystems["IV"]
    truth = true_type_vector(sub, grid.catalog)
    z_true = grid.catalog.z_per_len[list(truth)] * sub.lengths / 1000.0
    for seed in range(3):
        m = measure(tree_sim, NoiseModel(0.01, 0.01, seed=seed), NPMU)
        est = ClosedFormIdentifier(grid.catalog).fit(sub, m)
        assert np.max(np.abs(est.impedances_ / z_true - 1)) <= 0.5


@pytest.mark.slow
def test_noise_montecarlo_envelope(grid, tree_npmu, tree_subsystems):
    # 3 sigma = 10 % on the drop, both boundary currents and every length
    sub = tree_subsystems["IV"]
    truth = true_type_vector(sub, grid.catalog)
    z_true = grid.catalog.z_per_len[list(truth)] * sub.lengths / 1000.0
    base, _ = problem_from_measurements(sub, tree_npmu, grid.catalog, energy_scaling=RAW)
    rel = []
    for trial in range(50):
        p = perturb_closed_form_problem(base, np.random.default_rng([8, trial]), 0.10)
        est = ClosedFormIdentifier(grid.catalog).fit_problem(p, energy_scaling="share")
        rel.append(est.impedances_ / z_true - 1)
    rel = np.array(rel)
    assert np.all(np.abs(rel) <= 0.5)
    assert np.all(np.abs(np.median(rel, axis=0)) <= 0.15)
