"""Reference instances and brute-force oracles used by the test suite.

Nothing here is used by the estimators themselves; the oracles rebuild
their constraints from the physical definitions so that they share no
code with the solvers they check.
"""

from dataclasses import replace

import numpy as np

from .closedform import ClosedFormProblem, aggregate, block_factor
from .grid import decompose_subsystems, load_default_grid, true_type_vector
from .sequence import positive_sequence
from .simulate import profiles_for_grid, simulate


def consistent_closed_form_instance(subsystem="IV", T=1440, max_steps=96, seed=0, grid=None):
    """Noiseless closed-form instance that the magnitude model fits exactly.

    The true positive-sequence segment currents of a tree simulation are
    block-averaged to ``max_steps`` steps; the voltage drop is their
    impedance-weighted sum and the interior energies are computed from the
    same currents, so the true type vector attains a zero residual.

    Returns
    -------
    problem : ClosedFormProblem
    truth : tuple
        True catalog index per segment.
    currents : ndarray of shape (n_s, T')
        True segment currents in A.
    """
    g = grid or load_default_grid()
    states = g.true_switch_states()
    sub = {s.id: s for s in decompose_subsystems(g, states)}[subsystem]
    sim = simulate(g, profiles_for_grid(g, dt=60, T=T, seed=seed), states)
    path = sub.path
    v = np.array([np.abs(positive_sequence(sim.node_voltage(n))) for n in path])
    i = np.array([
        np.abs(positive_sequence(sim.segment_current(s.id, towards=path[j + 1])))
        for j, s in enumerate(sub.segments)
    ])
    f = block_factor(T, max_steps)
    v, i = aggregate(v, f), aggregate(i, f)
    truth = true_type_vector(sub, g.catalog)
    z = g.catalog.z_per_len[list(truth)] * sub.lengths / 1000.0
    problem = ClosedFormProblem(
        dv=-(z @ i), i_in=i[0], i_out=i[-1], v_in=v[0], v_out=v[-1], lengths=sub.lengths,
        z_per_len=g.catalog.z_per_len, dt=60.0 * f,
    )
    problem.energies = problem.dt / 3600.0 * np.sum(problem.v_hat() * (i[:-1] - i[1:]), axis=1)
    return problem, truth, i


def random_closed_form_problem(rng, n_s, T, with_energy=True, noise=0.02):
    """Small random instance with decreasing currents and consistent energies."""
    lengths = rng.uniform(20.0, 120.0, n_s)
    z_per_len = np.sort(rng.uniform(0.2, 0.7, 3))
    types = np.sort(rng.integers(0, 3, n_s))
    draws = rng.uniform(0.0, 20.0, (n_s, T))
    cur = np.cumsum(draws[::-1], axis=0)[::-1] + rng.uniform(0.0, 5.0, T)  # non-increasing along path
    z = z_per_len[types] * lengths / 1000.0
    dv = -(z @ cur) * (1.0 + noise * rng.standard_normal(T))
    v_in = 230.0 + rng.uniform(-2, 2, T)
    v_out = v_in + dv
    p = ClosedFormProblem(dv, cur[0], cur[-1], v_in, v_out, lengths, z_per_len, dt=900.0)
    if with_energy:
        p.energies = p.dt / 3600.0 * np.sum(p.v_hat() * (cur[:-1] - cur[1:]), axis=1)
    return p, tuple(int(t) for t in types)


def _inner_constraints(problem):
    """Interior currents as ``x`` (T * (n_s - 2), time-major); returns the
    affine maps ``full(x)``, the equality rows ``(E, e)`` and the ordering
    rows ``(G, h)`` with ``G x >= h``, all built from the definitions."""
    p = problem
    T, n_s = p.T, p.n_s
    n_int = n_s - 2
    n = T * n_int

    def idx(j, t):  # interior current j (1..n_s-2) at step t
        return t * n_int + (j - 1)

    def current_row(j, t):
        """Coefficients and constant of current j at step t."""
        a = np.zeros(n)
        if j == 0:
            return a, p.i_in[t]
        if j == n_s - 1:
            return a, p.i_out[t]
        a[idx(j, t)] = 1.0
        return a, 0.0

    G, h = [], []
    for t in range(T):
        for j in range(n_s - 1):
            a0, c0 = current_row(j, t)
            a1, c1 = current_row(j + 1, t)
            G.append(a0 - a1)
            h.append(c1 - c0)
    E, e = [], []
    if p.energies is not None:
        vh = p.v_hat()
        c = p.energy_sign * p.dt / 3600.0
        for j in range(n_s - 1):
            row, const = np.zeros(n), 0.0
            for t in range(T):
                a0, c0 = current_row(j, t)
                a1, c1 = current_row(j + 1, t)
                row += c * vh[j, t] * (a0 - a1)
                const += c * vh[j, t] * (c0 - c1)
            E.append(row)
            e.append(p.energies[j] - const)

    def full(x):
        x = np.asarray(x).reshape(-1, T, n_int)
        inner = np.moveaxis(x, 2, 1)  # (batch, n_int, T)
        b = x.shape[0]
        return np.concatenate([np.broadcast_to(p.i_in, (b, 1, T)), inner,
                               np.broadcast_to(p.i_out, (b, 1, T))], axis=1)

    return full, (np.array(E).reshape(-1, n), np.array(e)), (np.array(G), np.array(h))


def grid_search_inner(problem, types, points=41, levels=40, feas_tol=1e-7):
    """Zooming grid search over the interior currents of one type vector.

    Equalities are removed with an orthonormal null-space parametrisation;
    the remaining free dimension must be at most 3. Returns the smallest
    objective found (V^2) among grid points satisfying all constraints.
    """
    p = problem
    full, (E, e), (G, h) = _inner_constraints(p)
    n = G.shape[1]
    if E.shape[0]:
        x_p = np.linalg.lstsq(E, e, rcond=None)[0]
        _, s, vt = np.linalg.svd(E)
        rank = int(np.sum(s > 1e-12 * s[0]))
        N = vt[rank:].T
    else:
        x_p, N = np.zeros(n), np.eye(n)
    d = N.shape[1]
    if d > 3:
        raise ValueError(f"grid search needs at most 3 free dimensions, got {d}")
    z = p.impedances(types)
    span = float(np.max(p.i_in)) * np.sqrt(n) + np.linalg.norm(x_p)
    lo, hi = np.full(d, -span), np.full(d, span)
    best_val, best_y = np.inf, None
    for _ in range(levels):
        axes = [np.linspace(lo[k], hi[k], points) for k in range(d)]
        Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        X = x_p[None, :] + Y @ N.T
        ok = np.all(X @ G.T - h[None, :] >= -feas_tol * (1.0 + np.abs(h).max()), axis=1)
        if not ok.any():
            break
        cur = full(X[ok])
        r = p.dv[None, :] + np.einsum("k,bkt->bt", z, cur)
        vals = np.sum(r * r, axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_y = float(vals[k]), Y[ok][k]
        cell = (hi - lo) / (points - 1)
        lo, hi = best_y - 3 * cell, best_y + 3 * cell
    return best_val


def separable_grid_search(problem, types, points=401, levels=12):
    """Grid search without energy rows: the steps decouple, so each step's
    interior currents (at most 2 for ``n_s <= 4``) are searched alone."""
    p = problem
    z = p.impedances(types)
    n_int = p.n_s - 2
    if n_int > 2:
        raise ValueError("separable grid search supports n_s <= 4")
    total = 0.0
    for t in range(p.T):
        if n_int == 0:
            r = p.dv[t] + z[0] * p.i_in[t] + z[-1] * p.i_out[t]
            total += r * r
            continue
        lo, hi = np.full(n_int, p.i_out[t]), np.full(n_int, p.i_in[t])
        best = np.inf
        for _ in range(levels):
            axes = [np.linspace(lo[k], hi[k], points) for k in range(n_int)]
            X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n_int)
            chain = np.column_stack([np.full(len(X), p.i_in[t]), X, np.full(len(X), p.i_out[t])])
            ok = np.all(np.diff(chain, axis=1) <= 1e-12, axis=1)
            r = p.dv[t] + chain[ok] @ z
            k = int(np.argmin(r * r))
            best = min(best, float(r[k] ** 2))
            cell = (hi - lo) / (points - 1)
            c = X[ok][k]
            lo = np.maximum(c - 3 * cell, p.i_out[t])
            hi = np.minimum(c + 3 * cell, p.i_in[t])
        total += best
    return total


def perturb_closed_form_problem(problem, rng, three_sigma=0.10, three_sigma_length=None):
    """Copy of ``problem`` with relative Gaussian noise on its inputs.

    Every step of the voltage drop and of both boundary currents, and every
    segment length, is scaled by ``1 + e`` with ``e ~ N(0, (three_sigma / 3)^2)``
    drawn independently. The outflow is capped at the inflow so the ordering
    stays satisfiable. Energies are left untouched.
    """
    s = three_sigma / 3.0
    s_len = s if three_sigma_length is None else three_sigma_length / 3.0

    def noisy(x, sd):
        return x * (1.0 + sd * rng.standard_normal(np.shape(x)))

    i_in = noisy(problem.i_in, s)
    i_out = np.minimum(noisy(problem.i_out, s), i_in)
    return replace(
        problem, dv=noisy(problem.dv, s), i_in=i_in, i_out=i_out, lengths=noisy(problem.lengths, s_len)
    )
