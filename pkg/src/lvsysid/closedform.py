"""Joint estimation of per-segment cable types and interior current profiles.

For every non-decreasing cable-type vector a convex least-squares problem
in the unmeasured interior currents is solved: fit the measured
positive-sequence voltage drop with ``sum_k z_k i_k(t)`` while the current
decreases along the path, the boundary currents are pinned to their
measurements, and the energy taken at every interior node matches its
meter total. The type vector with the smallest fit residual wins.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import (
    Infeasible,
    InfeasibleSubproblem,
    NoFeasibleAssignment,
    SingularKkt,
)
from .kernels import BlockQp, enumerate_monotone, solve_block_interior_point
from .regression import boundary_series, orient_boundary

HARD = "hard"
SOFT = "soft"
OFF = "off"

RAW = "raw"
SHARE = "share"


def block_factor(T, max_steps):
    """Smallest divisor of ``T`` that brings the step count to ``max_steps`` or below."""
    if max_steps is None or T <= max_steps:
        return 1
    for f in range(int(np.ceil(T / max_steps)), T + 1):
        if T % f == 0:
            return f
    return T


def aggregate(x, factor):
    """Block means over the last axis."""
    x = np.asarray(x, dtype=float)
    if factor == 1:
        return x
    return x.reshape(x.shape[:-1] + (x.shape[-1] // factor, factor)).mean(axis=-1)


@dataclass
class ClosedFormProblem:
    """Inputs of the joint type/current estimation for one subsystem.

    ``dv`` is ``|v1_l| - |v1_k|`` per step (non-positive when current flows
    from ``k`` to ``l``); ``energies`` holds the per-phase energy in Wh
    taken at the ``n_s - 1`` interior nodes, ordered from ``k``.
    """

    dv: np.ndarray
    i_in: np.ndarray
    i_out: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    lengths: np.ndarray
    z_per_len: np.ndarray
    dt: float
    energies: np.ndarray = None
    energy_sign: float = 1.0

    def __post_init__(self):
        for name in ("dv", "i_in", "i_out", "v_in", "v_out"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        self.lengths = np.asarray(self.lengths, dtype=float).reshape(-1)
        self.z_per_len = np.asarray(self.z_per_len, dtype=float).reshape(-1)
        T = self.dv.size
        if any(getattr(self, n).size != T for n in ("i_in", "i_out", "v_in", "v_out")):
            raise ValueError("boundary series differ in length")
        if self.lengths.size < 1 or np.any(self.lengths <= 0):
            raise ValueError("segment lengths must be positive")
        if self.z_per_len.size < 1:
            raise ValueError("cable catalog is empty")
        if self.energies is not None:
            self.energies = np.asarray(self.energies, dtype=float).reshape(-1)
            if self.energies.size != self.n_s - 1:
                raise ValueError(f"need {self.n_s - 1} interior energies, got {self.energies.size}")
            if np.any(self.energies < 0):
                raise ValueError("energies must be non-negative")
        if self.energy_sign not in (1, -1, 1.0, -1.0):
            raise ValueError("energy_sign must be +1 or -1")

    @property
    def T(self):
        return self.dv.size

    @property
    def n_s(self):
        return self.lengths.size

    def v_hat(self):
        """Interior node voltages ``(n_s - 1, T)`` interpolated by cumulative length."""
        frac = np.cumsum(self.lengths)[:-1] / self.lengths.sum()
        return self.v_in[None, :] * (1.0 - frac[:, None]) + self.v_out[None, :] * frac[:, None]

    def impedances(self, types):
        """Per-segment impedance magnitudes (ohm) of a type vector."""
        return self.z_per_len[list(types)] * self.lengths / 1000.0

    def aggregated(self, factor):
        if factor == 1:
            return self
        return ClosedFormProblem(
            aggregate(self.dv, factor), aggregate(self.i_in, factor), aggregate(self.i_out, factor),
            aggregate(self.v_in, factor), aggregate(self.v_out, factor), self.lengths,
            self.z_per_len, self.dt * factor, self.energies, self.energy_sign,
        )

    def objective(self, currents, types):
        """Squared-drop residual for full currents ``(n_s, T)`` (V^2)."""
        r = self.dv + self.impedances(types) @ currents
        return float(r @ r)

    def ordering_residual(self, currents):
        """Most negative ``i_k - i_{k+1}`` (A); non-negative when the ordering holds."""
        if currents.shape[0] < 2:
            return 0.0
        return float(np.min(currents[:-1] - currents[1:]))

    def energy_residual(self, currents):
        """Relative mismatch of every interior energy (empty without energies)."""
        if self.energies is None:
            return np.zeros(0)
        drops = currents[:-1] - currents[1:]
        e = self.energy_sign * self.dt / 3600.0 * np.sum(self.v_hat() * drops, axis=1)
        scale = np.maximum(np.abs(self.energies), 1e-12 + 1e-9 * np.abs(self.energies).max())
        return (e - self.energies) / scale

    def share_normalized(self):
        """Copy whose energies keep only each junction's share of the total.

        The absolute level comes from the boundary currents: every junction
        takes its share of the current drop ``i_in - i_out`` at every step,
        so the proportional split is feasible by construction.
        """
        if self.energies is None or self.energies.sum() <= 0:
            return self
        share = self.energies / self.energies.sum()
        drop = np.clip(self.i_in - self.i_out, 0.0, None)
        e = self.energy_sign * self.dt / 3600.0 * share * (self.v_hat() @ drop)
        return replace(self, energies=np.abs(e))


@dataclass
class InnerResult:
    types: tuple
    currents: np.ndarray  # (n_s, T) including pinned boundary rows
    objective: float
    status: str = "ok"
    iterations: int = 0
    kkt_residual: float = 0.0


@dataclass
class ClosedFormSolution:
    types: tuple
    impedances: np.ndarray  # ohm per segment
    currents: np.ndarray
    objective: float
    candidates: list = field(default_factory=list, repr=False)
    tie: bool = False
    ordering_residual: float = 0.0
    energy_residual: float = 0.0


class _InnerBuilder:
    """Constraint structure shared by all type vectors of one problem.

    Interior currents are stored time-major, one block of ``n_s - 2``
    currents per step, in units of the mean inflow; drops are in units of
    the mean measured drop. Every block carries its own ordering rows and
    the energy rows couple the blocks.
    """

    def __init__(self, problem, energy_mode=HARD, ridge=1e-9, energy_weight=1.0):
        if energy_mode not in (HARD, SOFT, OFF):
            raise ValueError(f"unknown energy mode {energy_mode!r}")
        p = problem
        self.p = p
        self.mode = energy_mode if p.energies is not None else OFF
        self.ridge = ridge
        self.energy_weight = energy_weight
        self.feas_tol = 1e-8  # on the scaled rows
        T, n_s = p.T, p.n_s
        self.n_int = n_int = max(n_s - 2, 0)
        self.i_scale = max(float(np.mean(np.abs(p.i_in))), 1e-9)
        self.v_scale = max(float(np.mean(np.abs(p.dv))), 1e-9)
        i_in, i_out = p.i_in / self.i_scale, p.i_out / self.i_scale

        # ordering i_j - i_{j+1} >= 0, j = 0..n_s-2, with i_0 and i_{n_s-1} pinned
        self.G = np.zeros((n_s - 1, n_int))
        self.h = np.zeros((T, n_s - 1))
        for j in range(n_s - 1):
            if j >= 1:
                self.G[j, j - 1] = 1.0
            else:
                self.h[:, j] -= i_in
            if j < n_int:
                self.G[j, j] = -1.0
            else:
                self.h[:, j] += i_out

        # interior energies: sign * dt_h * sum_t vhat_j (i_j - i_{j+1}) = E_j
        self.C = np.zeros((0, T, n_int))
        self.d = np.zeros(0)
        if self.mode != OFF and n_int:
            vh = p.v_hat()
            c = p.energy_sign * p.dt / 3600.0
            self.C = np.zeros((n_s - 1, T, n_int))
            self.d = np.zeros(n_s - 1)
            for j in range(n_s - 1):
                scale = max(abs(p.energies[j]), abs(c) * np.abs(vh[j]).sum() * self.i_scale * 1e-3, 1e-12)
                coef = c * vh[j] * self.i_scale / scale
                rhs = p.energies[j] / scale
                if j >= 1:
                    self.C[j, :, j - 1] += coef
                else:
                    rhs -= np.sum(coef * i_in)
                if j < n_int:
                    self.C[j, :, j] -= coef
                else:
                    rhs += np.sum(coef * i_out)
                self.d[j] = rhs
        self.prior = self._prior() if n_int else np.zeros((0, T))
        # drops are non-negative and v_hat positive: a negative sign cannot meet E_j > 0
        self.sign_conflict = bool(
            self.mode == HARD and n_int and p.energy_sign < 0 and np.any(p.energies > 0)
        )

    def _prior(self):
        """Interior currents that share the boundary current drop by energy (or evenly)."""
        p = self.p
        n_j = p.n_s - 1
        if p.energies is not None and p.energies.sum() > 0:
            share = p.energies / p.energies.sum()
        else:
            share = np.full(n_j, 1.0 / n_j)
        drop = np.clip(p.i_in - p.i_out, 0.0, None)
        cur = p.i_in[None, :] - np.cumsum(share)[:, None] * drop[None, :]
        return cur[: self.n_int]  # currents of segments 2..n_s-1

    def full_currents(self, x):
        """``(n_s, T)`` currents in A from the time-major interior block ``(T, n_s - 2)``."""
        p = self.p
        if p.n_s == 1:
            return p.i_in[None, :].copy()
        inner = np.asarray(x).T * self.i_scale if self.n_int else np.zeros((0, p.T))
        return np.vstack([p.i_in[None, :], inner, p.i_out[None, :]])

    def block_qp(self, types):
        """The scaled inner problem of one type vector as a :class:`BlockQp`."""
        p = self.p
        z = p.impedances(types)
        base = p.dv + z[0] * p.i_in + z[-1] * p.i_out
        a = z[1:-1] * self.i_scale / self.v_scale
        c = base / self.v_scale
        ridge = self.ridge * max(float(a @ a), 1e-12)
        x_ref = self.prior.T / self.i_scale
        H = np.outer(a, a) + ridge * np.eye(self.n_int)
        g = c[:, None] * a[None, :] - ridge * x_ref
        tail = {}
        if self.mode == SOFT and self.C.shape[0]:
            m = self.C.shape[0]
            tail = dict(
                tail_diag=np.full(m, self.energy_weight**2 * p.T),
                tail_g=np.zeros(m),
                tail_C=-np.eye(m),
            )
        return BlockQp(H, g, self.G, self.h, self.C, self.d, **tail), x_ref

    def solve(self, types):
        p = self.p
        if self.n_int == 0:
            cur = self.full_currents(np.zeros((p.T, 0)))
            return InnerResult(tuple(types), cur, p.objective(cur, types))
        if self.sign_conflict:
            raise InfeasibleSubproblem("energy sign contradicts decreasing currents")
        qp, x_ref = self.block_qp(types)
        try:
            res = solve_block_interior_point(qp, x0=x_ref)
        except (Infeasible, SingularKkt) as exc:
            raise InfeasibleSubproblem(str(exc)) from exc
        if res.eq_residual > self.feas_tol or res.ineq_violation > self.feas_tol:
            raise InfeasibleSubproblem(
                f"constraint residual {max(res.eq_residual, res.ineq_violation):.2e} after solve"
            )
        cur = self.full_currents(res.x)
        return InnerResult(tuple(types), cur, p.objective(cur, types), "ok", res.iterations, res.kkt_residual)


def solve_inner_qp(problem, types, energy_mode=HARD, ridge=1e-9):
    """Best interior currents for one fixed type vector."""
    return _InnerBuilder(problem, energy_mode, ridge).solve(types)


def solve_closed_form(problem, energy_mode=HARD, ridge=1e-9, candidates=None, tie_tol=1e-12):
    """Enumerate monotone type vectors and keep the one with the smallest residual.

    Infeasible candidates are recorded and skipped; ties go to the
    lexicographically smallest vector.
    """
    builder = _InnerBuilder(problem, energy_mode, ridge)
    if candidates is None:
        candidates = enumerate_monotone(problem.n_s, problem.z_per_len.size)
    results = []
    for types in candidates:
        try:
            results.append(builder.solve(types))
        except InfeasibleSubproblem:
            results.append(InnerResult(tuple(types), None, float("inf"), "infeasible"))
    feasible = [r for r in results if r.status == "ok"]
    if not feasible:
        raise NoFeasibleAssignment("every type vector makes the interior current problem infeasible")
    best = min(feasible, key=lambda r: (r.objective, r.types))
    tol = tie_tol * max(1.0, problem.dv @ problem.dv)
    tie = sum(1 for r in feasible if r.objective - best.objective <= tol) > 1
    return ClosedFormSolution(
        types=best.types,
        impedances=problem.impedances(best.types),
        currents=best.currents,
        objective=best.objective,
        candidates=[(r.types, r.objective, r.status) for r in results],
        tie=tie,
        ordering_residual=problem.ordering_residual(best.currents),
        energy_residual=float(np.max(np.abs(problem.energy_residual(best.currents)), initial=0.0))
        if builder.mode == HARD
        else float("nan"),
    )


# ------------------------------------------------------------ measurement glue


def problem_from_measurements(sub, meas, catalog, lengths=None, energy_sign=1.0, use_energy=True,
                              energy_scaling=SHARE):
    """Assemble a problem from boundary measurements and interior meter totals.

    Meter energies are three-phase active totals; a third of each is the
    per-phase value. With ``energy_scaling="share"`` only their relative
    sizes are kept (see :meth:`ClosedFormProblem.share_normalized`), since
    active energy and the magnitude product ``|v1| |i1|`` differ by the
    power factor and the load unbalance. Steps where the measured outflow
    exceeds the inflow are replaced by the mean of both currents so that
    the ordering constraints stay satisfiable. Returns ``(problem, swapped)``.
    """
    b = orient_boundary(boundary_series(sub, meas))
    lengths = np.asarray(sub.lengths if lengths is None else lengths, dtype=float)
    interior = list(sub.interior)
    if b.swapped:
        lengths = lengths[::-1]
        interior = interior[::-1]
    i_in, i_out = b.i_in.copy(), b.i_out.copy()
    bad = i_out > i_in
    mid = 0.5 * (i_in + i_out)
    i_in[bad] = mid[bad]
    i_out[bad] = mid[bad]
    energies = None
    if use_energy and interior:
        energies = np.array([meas.energies.get(n, 0.0) for n in interior]) / 3.0
    problem = ClosedFormProblem(
        dv=b.v_l - b.v_k,
        i_in=i_in,
        i_out=i_out,
        v_in=b.v_k,
        v_out=b.v_l,
        lengths=lengths,
        z_per_len=catalog.z_per_len,
        dt=meas.dt,
        energies=energies,
        energy_sign=energy_sign,
    )
    if energy_scaling == SHARE:
        problem = problem.share_normalized()
    elif energy_scaling != RAW:
        raise ValueError(f"unknown energy scaling {energy_scaling!r}")
    return problem, b.swapped


class ClosedFormIdentifier(BaseEstimator):
    """Closed-form cable-type and interior-current identification of one subsystem.

    Parameters
    ----------
    catalog : CableCatalog
    energy_mode : {"hard", "soft", "off"}
        Interior energies as equality constraints, as penalised residuals,
        or not used.
    energy_sign : {1, -1}
        Sign convention of the energy balance; ``1`` counts consumption as
        positive.
    energy_scaling : {"share", "raw"}
        How meter totals enter the energy rows: as shares of the boundary
        current drop, or as absolute per-phase energies.
    max_steps : int
        Time series are averaged in blocks down to at most this many steps.
    ridge : float
        Relative weight of a small proximity term towards a proportional
        current split; makes the inner problem strictly convex.
    """

    def __init__(self, catalog, energy_mode=HARD, energy_sign=1.0, energy_scaling=SHARE, max_steps=96,
                 ridge=1e-9):
        self.catalog = catalog
        self.energy_mode = energy_mode
        self.energy_scaling = energy_scaling
        self.energy_sign = energy_sign
        self.max_steps = max_steps
        self.ridge = ridge

    def fit(self, sub, meas, lengths=None):
        problem, swapped = problem_from_measurements(
            sub, meas, self.catalog, lengths, self.energy_sign, self.energy_mode != OFF, RAW
        )
        return self.fit_problem(problem, swapped, self.energy_scaling)

    def fit_problem(self, problem, swapped=False, energy_scaling=RAW):
        """Aggregate in time, optionally share-normalize the energies, then solve."""
        problem = problem.aggregated(block_factor(problem.T, self.max_steps))
        if energy_scaling == SHARE:
            problem = problem.share_normalized()
        sol = solve_closed_form(problem, self.energy_mode, self.ridge)
        self.problem_ = problem
        self.solution_ = sol
        self.swapped_ = swapped
        order = slice(None, None, -1) if swapped else slice(None)
        self.types_ = tuple(sol.types[order])
        self.impedances_ = sol.impedances[order]
        return self

    def predict(self, sub=None, meas=None):
        return self.types_
