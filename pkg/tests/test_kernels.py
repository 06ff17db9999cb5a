import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lvsysid.exceptions import Infeasible, SingularKkt
from lvsysid.kernels import (
    MAXIMIZE,
    MINIMIZE,
    BlockQp,
    QpSpec,
    brute_force_assignment,
    brute_force_assignment_batch,
    count_monotone,
    enumerate_monotone,
    solve_active_set,
    solve_assignment,
    solve_block_interior_point,
    solve_equality_ls,
    solve_interior_point,
)


# ----------------------------------------------------------------- assignment


@settings(max_examples=200)
@given(arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), st.sampled_from([MINIMIZE, MAXIMIZE]))
def test_assignment_matches_brute_force(rho, sense):
    fast, slow = solve_assignment(rho, sense), brute_force_assignment(rho, sense)
    assert fast.objective == pytest.approx(slow.objective, abs=1e-12)
    if not fast.tie:
        assert fast.perm == slow.perm


def test_batch_oracle_agrees_with_single_oracle():
    rhos = np.random.default_rng(0).uniform(-1, 1, (200, 3, 3))
    for sense in (MINIMIZE, MAXIMIZE):
        perms, objs = brute_force_assignment_batch(rhos, sense)
        for r, p, o in zip(rhos, perms, objs):
            single = brute_force_assignment(r, sense)
            assert tuple(p) == single.perm and o == pytest.approx(single.objective)


def test_assignment_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((3, 3)), "sideways")
    assert solve_assignment(np.zeros((3, 3))).tie


# ------------------------------------------------------- monotone enumeration


def test_monotone_counts():
    assert count_monotone(8, 3) == 45 == len(list(enumerate_monotone(8, 3)))
    assert list(enumerate_monotone(1, 3)) == [(0,), (1,), (2,)]
    brute = [v for v in itertools.product(range(3), repeat=5) if list(v) == sorted(v)]
    assert list(enumerate_monotone(5, 3)) == brute
    with pytest.raises(ValueError):
        list(enumerate_monotone(0, 3))


# ------------------------------------------------------------ equality LS/QP


def test_identity_least_squares():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(solve_equality_ls(QpSpec(np.eye(3), b)), b)


def test_sum_constraint_splits_evenly():
    spec = QpSpec(np.eye(3), np.zeros(3), C=np.ones((1, 3)), d=[1.0])
    assert np.allclose(solve_equality_ls(spec), [1 / 3] * 3)


def test_equality_ls_matches_pinv_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, m = 6, 2
        A, b = rng.normal(size=(10, n)), rng.normal(size=10)
        C, d = rng.normal(size=(m, n)), rng.normal(size=m)
        x = solve_equality_ls(QpSpec(A, b, C, d))
        # null-space parametrisation: x = x_p + N w
        x_p = np.linalg.pinv(C) @ d
        N = np.linalg.svd(C)[2][m:].T
        w = np.linalg.pinv(A @ N) @ (b - A @ x_p)
        assert np.allclose(x, x_p + N @ w, atol=1e-9)


def test_dependent_equalities_raise():
    C = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(SingularKkt):
        solve_equality_ls(QpSpec(np.eye(2), np.zeros(2), C, [1.0, 2.0]))


def test_bound_becomes_active():
    # min (x - 2)^2 s.t. x <= 1
    res = solve_active_set(QpSpec([[1.0]], [2.0], G=[[-1.0]], h=[-1.0]))
    assert res.x[0] == pytest.approx(1.0)
    assert res.active == [0] and res.ineq_multipliers[0] > 0


def test_inactive_inequality_equals_equality_only():
    spec = QpSpec(np.eye(3), [1.0, 2.0, 3.0], C=np.ones((1, 3)), d=[3.0], G=-np.eye(3), h=[-10.0] * 3)
    res = solve_active_set(spec)
    assert res.active == []
    assert np.allclose(res.x, solve_equality_ls(spec))


def test_inconsistent_inequalities_infeasible():
    spec = QpSpec([[1.0]], [0.0], G=[[1.0], [-1.0]], h=[1.0, 0.0])  # x >= 1 and x <= 0
    with pytest.raises(Infeasible):
        solve_active_set(spec)


def random_qp(rng, n=None):
    n = n or int(rng.integers(2, 8))
    m_eq = int(rng.integers(0, min(3, n)))
    m_in = int(rng.integers(0, 2 * n))
    A, b = rng.normal(size=(n + 3, n)), rng.normal(size=n + 3)
    x0 = rng.normal(size=n)
    C = rng.normal(size=(m_eq, n))
    G = rng.normal(size=(m_in, n))
    # x0 is feasible; some rows tight at x0
    slack = rng.uniform(0, 1, m_in) * (rng.uniform(size=m_in) < 0.6)
    return QpSpec(A, b, C, C @ x0, G, G @ x0 - slack)


def test_active_set_and_interior_point_agree_on_random_qps():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        spec = random_qp(rng)
        a = solve_active_set(spec)
        b = solve_interior_point(spec)
        assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-9)
        assert np.allclose(a.x, b.x, atol=1e-5)
        assert a.ineq_violation < 1e-8 and b.ineq_violation < 1e-8
        assert a.kkt_residual < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(0.01, 100), min_size=16, max_size=16))
def test_row_scaling_invariance(seed, scales):
    spec = random_qp(np.random.default_rng(seed), n=5)
    k = np.array(scales[: spec.G.shape[0]])
    scaled = QpSpec(spec.A, spec.b, spec.C, spec.d, spec.G * k[:, None], spec.h * k)
    assert np.allclose(solve_active_set(spec).x, solve_active_set(scaled).x, atol=1e-7)


# ------------------------------------------------------------- block QP route


def random_block_qp(rng, nb, b, m_eq, tail):
    R = rng.normal(size=(b, b)) + 3 * np.eye(b)
    H = R.T @ R
    g = rng.normal(size=(nb, b))
    G = rng.normal(size=(4, b))
    x0 = rng.normal(size=(nb, b))
    h = x0 @ G.T - rng.uniform(0, 1, (nb, 4)) * (rng.uniform(size=(nb, 4)) < 0.5)
    C = rng.normal(size=(m_eq, nb, b))
    d = np.einsum("jtb,tb->j", C, x0)
    kw = {}
    if tail:
        kw = dict(tail_diag=rng.uniform(0.5, 2, m_eq), tail_g=rng.normal(size=m_eq), tail_C=np.eye(m_eq))
    return BlockQp(H, g, G, h, C, d, **kw)


def dense_equivalent(qp):
    nb, b = qp.shape
    k = qp.tail_diag.size
    L = np.linalg.cholesky(qp.H)  # H = L L'
    n = nb * b + k
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    for t in range(nb):
        sl = slice(t * b, (t + 1) * b)
        A[sl, sl] = L.T
        rhs[sl] = -np.linalg.solve(L, qp.g[t])
    if k:
        A[nb * b:, nb * b:] = np.diag(np.sqrt(qp.tail_diag))
        rhs[nb * b:] = -qp.tail_g / np.sqrt(qp.tail_diag)
    C = np.hstack([qp.C.reshape(qp.C.shape[0], -1), qp.tail_C])
    G = np.zeros((nb * qp.G.shape[0], n))
    for t in range(nb):
        G[t * qp.G.shape[0]:(t + 1) * qp.G.shape[0], t * b:(t + 1) * b] = qp.G
    return QpSpec(A, rhs, C, qp.d, G, qp.h.ravel())


@pytest.mark.parametrize("tail", [False, True])
def test_block_interior_point_matches_dense_routes(tail):
    rng = np.random.default_rng(7 + tail)
    for _ in range(200):
        qp = random_block_qp(rng, nb=int(rng.integers(1, 6)), b=3, m_eq=2, tail=tail)
        blk = solve_block_interior_point(qp)
        spec = dense_equivalent(qp)
        dense = solve_interior_point(spec)
        ref = solve_active_set(spec)
        x_blk = np.concatenate([blk.x.ravel(), blk.u])
        assert np.allclose(x_blk, dense.x, atol=1e-6)
        assert np.allclose(x_blk, ref.x, atol=1e-6)
        assert blk.eq_residual < 1e-8 and blk.ineq_violation < 1e-8
