"""Exact optimization primitives shared by the identification stages.

* 3x3 assignment (binary linear program over permutation matrices),
  solved by enumerating the six permutations, with an independent
  brute-force oracle over all binary 3x3 matrices.
* Enumeration of non-decreasing categorical index vectors.
* Equality-constrained least squares via the KKT system, a dense dual
  active-set QP (Goldfarb-Idnani) and a dense interior-point QP for
  least-squares objectives with equality and ``>=`` inequality constraints.
* A block interior-point QP for problems that separate per time step
  except for a few coupling equalities; its Newton systems are solved with
  a sparse LU of the full KKT matrix.
"""

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .exceptions import Infeasible, SingularKkt

MINIMIZE = "min"
MAXIMIZE = "max"


def _sense_sign(sense):
    s = str(sense).lower()
    if s in ("min", "minimize"):
        return 1.0
    if s in ("max", "maximize"):
        return -1.0
    raise ValueError(f"unknown optimization sense {sense!r}")


# ---------------------------------------------------------------- assignment


@dataclass(frozen=True)
class Assignment:
    """Result of a 3x3 assignment problem.

    ``perm[q]`` is the row (parent channel) matched with column (child
    channel) ``q``.
    """

    perm: tuple
    objective: float
    tie: bool = False


PERMUTATIONS = tuple(itertools.permutations(range(3)))
_PERM_FLAT = np.array([[3 * p[q] + q for q in range(3)] for p in PERMUTATIONS])  # rho[p[q], q]


def solve_assignment(rho, sense=MINIMIZE, tie_tol=1e-12):
    """Extremise ``sum_q rho[perm[q], q]`` over the six permutations.

    Ties go to the lexicographically first permutation and set ``tie``.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (3, 3):
        raise ValueError("assignment matrix must be 3x3")
    sign = _sense_sign(sense)
    values = rho.ravel()[_PERM_FLAT].sum(axis=1)
    scores = sign * values
    best = int(np.argmin(scores))  # first minimum = lexicographically first permutation
    tol = tie_tol * max(1.0, abs(scores[best]))
    tie = int(np.count_nonzero(scores - scores[best] <= tol)) > 1
    return Assignment(PERMUTATIONS[best], float(values[best]), tie)


def _blp_constraints():
    # rows: each column of X sums to one, each row of X sums to one;
    # x is the column-wise vectorisation of X (x[3*q + p] = X[p, q])
    m = np.zeros((6, 9))
    for q in range(3):
        m[q, 3 * q : 3 * q + 3] = 1.0
    for p in range(3):
        m[3 + p, p::3] = 1.0
    return m


_BLP = _blp_constraints()


def brute_force_assignment(rho, sense=MINIMIZE):
    """Oracle: enumerate all 512 binary vectors and keep the feasible optimum."""
    rho = np.asarray(rho, dtype=float)
    c = rho.reshape(-1, order="F")
    sign = _sense_sign(sense)
    best_x, best_val = None, np.inf
    for bits in itertools.product((0.0, 1.0), repeat=9):
        x = np.array(bits)
        if not np.array_equal(_BLP @ x, np.ones(6)):
            continue
        val = sign * float(c @ x)
        if val < best_val:
            best_x, best_val = x, val
    X = best_x.reshape(3, 3, order="F")
    perm = tuple(int(np.argmax(X[:, q])) for q in range(3))
    return Assignment(perm, sign * best_val)


def brute_force_assignment_batch(rhos, sense=MINIMIZE):
    """Vectorised oracle for many matrices at once.

    The 512 binary vectors are screened against the assignment constraints
    once; every matrix is then scored against all feasible vectors. Returns
    ``(perms, objectives)`` with ``perms`` of shape ``(n, 3)``.
    """
    rhos = np.asarray(rhos, dtype=float).reshape(-1, 3, 3)
    bits = np.array(list(itertools.product((0.0, 1.0), repeat=9)))
    feasible = bits[np.all(bits @ _BLP.T == 1.0, axis=1)]
    c = rhos.transpose(0, 2, 1).reshape(-1, 9)  # column-wise vectorisation
    vals = c @ feasible.T
    best = np.argmin(_sense_sign(sense) * vals, axis=1)
    X = feasible[best].reshape(-1, 3, 3).transpose(0, 2, 1)  # X[p, q]
    return np.argmax(X, axis=1), vals[np.arange(len(best)), best]


# ------------------------------------------------------- monotone enumeration


def enumerate_monotone(n_s, m):
    """Yield every non-decreasing index vector of length ``n_s`` over ``range(m)``.

    Order is lexicographic; there are ``C(n_s + m - 1, m - 1)`` of them.
    """
    if n_s < 1 or m < 1:
        raise ValueError("n_s and m must be positive")
    yield from itertools.combinations_with_replacement(range(m), n_s)


def count_monotone(n_s, m):
    return comb(n_s + m - 1, m - 1)


# ----------------------------------------------------------------- QP kernels


@dataclass
class QpSpec:
    """Least-squares QP: min 1/2 ||A x - b||^2 s.t. C x = d, G x >= h."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray = None
    d: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[1]
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError("A and b row counts differ")
        self.C, self.d = self._pair(self.C, self.d, n, "equality")
        self.G, self.h = self._pair(self.G, self.h, n, "inequality")

    @staticmethod
    def _pair(M, v, n, what):
        if M is None:
            return np.zeros((0, n)), np.zeros(0)
        M = np.atleast_2d(np.asarray(M, dtype=float))
        v = np.asarray(v, dtype=float).reshape(-1)
        if M.shape[1] != n or M.shape[0] != v.shape[0]:
            raise ValueError(f"{what} constraint dimensions inconsistent")
        return M, v

    @property
    def n(self):
        return self.A.shape[1]

    def objective(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)


def _hessian(spec, ridge, x_ref):
    H = spec.A.T @ spec.A
    g = -spec.A.T @ spec.b
    if ridge:
        H = H + ridge * np.eye(spec.n)
        if x_ref is not None:
            g = g - ridge * np.asarray(x_ref, dtype=float)
    return H, g


def solve_equality_ls(spec, ridge=0.0, x_ref=None):
    """Solve the equality-constrained least-squares problem through its KKT system.

    Inequalities in ``spec`` are ignored. Raises :class:`SingularKkt` if the
    constraint rows are dependent or the objective is not strictly convex on
    their null space.
    """
    H, g = _hessian(spec, ridge, x_ref)
    C, d = spec.C, spec.d
    n, m = spec.n, C.shape[0]
    if m and np.linalg.matrix_rank(C) < m:
        raise SingularKkt("equality constraints are linearly dependent")
    K = np.block([[H, C.T], [C, np.zeros((m, m))]])
    rhs = np.concatenate([-g, d])
    if np.linalg.cond(K) > 1e14:
        raise SingularKkt("KKT matrix is singular")
    sol = np.linalg.solve(K, rhs)
    return sol[:n]


@dataclass
class QpResult:
    x: np.ndarray
    active: list
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    iterations: int
    objective: float
    kkt_residual: float = field(default=0.0)
    eq_residual: float = field(default=0.0)  # max |C x - d|
    ineq_violation: float = field(default=0.0)  # max(0, max(h - G x))


def solve_active_set(spec, ridge=0.0, x_ref=None, tol=1e-10, max_iter=None):
    """Dual active-set (Goldfarb-Idnani) solver for a strictly convex LS-QP.

    Starts from the equality-constrained optimum and repeatedly adds the
    most violated inequality, dropping active constraints whose multiplier
    would turn negative. Returns a :class:`QpResult` whose ``active`` lists
    the inequality rows held at equality.
    """
    H, g = _hessian(spec, ridge, x_ref)
    n = spec.n
    try:
        chol = linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularKkt("objective is not strictly convex; add a ridge term") from exc

    C, d, G, h = spec.C, spec.d, spec.G, spec.h
    m_eq, m_in = C.shape[0], G.shape[0]
    normals = np.vstack([C, G])  # every constraint row, equalities first
    rhs = np.concatenate([d, h])
    W_all = linalg.cho_solve(chol, normals.T)  # H^-1 n_j as columns
    K = normals @ W_all  # Gram matrix n_i' H^-1 n_j

    x = -linalg.cho_solve(chol, g)
    active = list(range(m_eq))
    u = np.zeros(0)
    if m_eq:
        M = K[:m_eq, :m_eq]
        dscale = 1.0 / np.sqrt(np.maximum(np.diag(M), np.finfo(float).tiny))
        Ms = M * dscale[:, None] * dscale[None, :]  # Jacobi scaling: cond is scale-free
        if np.linalg.cond(Ms) > 1e15:
            raise SingularKkt("equality constraints are linearly dependent")
        lam = dscale * np.linalg.solve(Ms, dscale * (C @ x - d))
        x = x - W_all[:, :m_eq] @ lam
        u = -lam

    row_norm = np.linalg.norm(G, axis=1) if m_in else np.zeros(0)
    row_norm[row_norm == 0] = 1.0
    scale = 1.0 + np.abs(h).max() if m_in else 1.0
    if max_iter is None:
        max_iter = 50 * (m_in + m_eq + 10)

    s = G @ x - h if m_in else np.zeros(0)
    it = 0
    while True:
        if m_in == 0:
            break
        viol = s / row_norm
        in_active = np.zeros(m_in, dtype=bool)
        in_active[[j - m_eq for j in active if j >= m_eq]] = True
        viol[in_active] = 0.0
        p_local = int(np.argmin(viol))
        if viol[p_local] >= -tol * scale:
            break
        p = m_eq + p_local
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise Infeasible(f"active-set iteration limit {max_iter} reached")
            if active:
                A_idx = np.array(active)
                M = K[np.ix_(A_idx, A_idx)]
                r = np.linalg.solve(M, K[A_idx, p])
                zn = K[p, p] - K[p, A_idx] @ r
            else:
                A_idx = np.zeros(0, dtype=int)
                r = np.zeros(0)
                zn = K[p, p]
            # partial (dual) step bounded by inequality multipliers hitting zero
            t1, drop = np.inf, None
            for k, j in enumerate(active):
                if j >= m_eq and r[k] > 1e-14:
                    ratio = u[k] / r[k]
                    if ratio < t1 or (ratio == t1 and j < active[drop]):
                        t1, drop = ratio, k
            sp = float(normals[p] @ x - rhs[p])
            t2 = -sp / zn if zn > 1e-14 * max(1.0, K[p, p]) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible("constraints are inconsistent")
            if np.isfinite(t2):
                z = W_all[:, p] - (W_all[:, A_idx] @ r if len(active) else 0.0)
                x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[drop]
            u = np.delete(u, drop)
        s = G @ x - h

    eq_mult = u[:m_eq].copy() if m_eq else np.zeros(0)
    ineq_mult = np.zeros(m_in)
    act_in = []
    for k, j in enumerate(active):
        if j >= m_eq:
            ineq_mult[j - m_eq] = u[k]
            act_in.append(j - m_eq)
    grad = H @ x + g
    stat = grad - normals.T @ np.concatenate([eq_mult, ineq_mult])
    kkt = float(np.abs(stat).max() / (1.0 + np.abs(g).max()))
    return QpResult(
        x=x,
        active=sorted(act_in),
        eq_multipliers=eq_mult,
        ineq_multipliers=ineq_mult,
        iterations=it,
        objective=spec.objective(x),
        kkt_residual=kkt,
        eq_residual=float(np.abs(C @ x - d).max()) if m_eq else 0.0,
        ineq_violation=float(max(0.0, (h - G @ x).max())) if m_in else 0.0,
    )


def solve_interior_point(spec, ridge=0.0, x_ref=None, x0=None, tol=1e-10, max_iter=100):
    """Mehrotra predictor-corrector interior-point method for the same QP.

    Immune to the degenerate vertices that stall active-set methods when
    many ordering rows meet at one point. Nearly dependent equality rows are
    handled by a tiny dual regularisation of the KKT system followed by one
    refinement step.
    """
    H, g = _hessian(spec, ridge, x_ref)
    C, d, G, h = spec.C, spec.d, spec.G, spec.h
    n, m_eq, m_in = spec.n, C.shape[0], G.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(m_eq)
    s = np.maximum(G @ x - h, 1.0) if m_in else np.zeros(0)
    z = np.ones(m_in)
    scale_p = 1.0 + max(np.abs(d).max(initial=0.0), np.abs(h).max(initial=0.0))
    scale_d = 1.0 + np.abs(g).max(initial=0.0) + np.abs(H).max(initial=0.0)
    delta = 1e-13 * (1.0 + np.abs(H).max(initial=0.0))

    def newton(W, r_d, r_p, r_s, comp):
        # reduced system in (dx, dy) after eliminating ds and dz
        M = H + (G.T * W) @ G if m_in else H
        rhs = -r_d
        if m_in:
            rhs = rhs + G.T @ ((comp - z * r_s) / s)
        K = np.zeros((n + m_eq, n + m_eq))
        K[:n, :n] = M
        K[:n, n:] = C.T
        K[n:, :n] = C
        K[n:, n:] = -delta * np.eye(m_eq)
        full = np.concatenate([rhs, -r_p])
        try:
            lu = linalg.lu_factor(K, check_finite=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularKkt("interior-point KKT matrix is singular") from exc
        sol = linalg.lu_solve(lu, full)
        K0 = K.copy()
        K0[n:, n:] = 0.0
        sol = sol + linalg.lu_solve(lu, full - K0 @ sol)  # refine against the exact system
        dx, dy = sol[:n], -sol[n:]
        ds = G @ dx + r_s if m_in else np.zeros(0)
        dz = (comp - z * ds) / s if m_in else np.zeros(0)
        return dx, dy, ds, dz

    def max_step(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

    if m_in:
        # shift slacks and multipliers away from zero after one affine step
        r_d = H @ x + g - C.T @ y - G.T @ z
        dx, dy, ds, dz = newton(z / s, r_d, C @ x - d, G @ x - s - h, -s * z)
        s = np.maximum(1.0, np.abs(s + ds))
        z = np.maximum(1.0, np.abs(z + dz))

    it = 0
    for it in range(1, max_iter + 1):
        r_d = H @ x + g - C.T @ y - G.T @ z
        r_p = C @ x - d
        r_s = G @ x - s - h
        mu = float(s @ z) / m_in if m_in else 0.0
        if (
            np.abs(r_p).max(initial=0.0) <= tol * scale_p
            and np.abs(r_s).max(initial=0.0) <= tol * scale_p
            and np.abs(r_d).max(initial=0.0) <= tol * scale_d
            and mu <= 1e-2 * tol
        ):
            break
        if not m_in:
            dx, dy, _, _ = newton(None, r_d, r_p, r_s, None)
            x, y = x + dx, y + dy
            continue
        W = z / s
        dx, dy, ds, dz = newton(W, r_d, r_p, r_s, -s * z)
        a_aff = min(max_step(s, ds), max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m_in
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds, dz = newton(W, r_d, r_p, r_s, -s * z - ds * dz + sigma * mu)
        a = 0.995 * min(max_step(s, ds), max_step(z, dz))
        a = min(a, 1.0)
        x, y, s, z = x + a * dx, y + a * dy, s + a * ds, z + a * dz
    else:
        raise Infeasible(f"interior-point method did not converge in {max_iter} iterations")
    grad = H @ x + g
    stat = grad - C.T @ y - G.T @ z
    active = [int(j) for j in np.nonzero(s <= 1e-7 * (1.0 + np.abs(h).max(initial=0.0)))[0]]
    return QpResult(
        x=x,
        active=active,
        eq_multipliers=y,
        ineq_multipliers=z,
        iterations=it,
        objective=spec.objective(x),
        kkt_residual=float(np.abs(stat).max(initial=0.0) / (1.0 + np.abs(g).max(initial=0.0))),
        eq_residual=float(np.abs(C @ x - d).max()) if m_eq else 0.0,
        ineq_violation=float(max(0.0, (h - G @ x).max())) if m_in else 0.0,
    )


@dataclass
class BlockQp:
    """QP whose variables split into ``nb`` equal blocks coupled only by equalities.

    min  sum_t 1/2 x_t' H x_t + g_t' x_t + 1/2 u' diag(tail_diag) u + tail_g' u
    s.t. G x_t >= h_t for every block t,
         sum_t C_t x_t + tail_C u = d.

    ``H`` and ``G`` are shared by all blocks; ``C`` has shape
    ``(m_eq, nb, b)``. The optional tail ``u`` carries slack variables with
    a diagonal Hessian (soft equalities).
    """

    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    h: np.ndarray
    C: np.ndarray = None
    d: np.ndarray = None
    tail_diag: np.ndarray = None
    tail_g: np.ndarray = None
    tail_C: np.ndarray = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.atleast_2d(np.asarray(self.g, dtype=float))
        nb, b = self.g.shape
        if self.H.shape != (b, b):
            raise ValueError("H must be a shared (b, b) block")
        self.G = np.asarray(self.G, dtype=float).reshape(-1, b)
        self.h = np.asarray(self.h, dtype=float).reshape(nb, self.G.shape[0])
        if self.C is None:
            self.C, self.d = np.zeros((0, nb, b)), np.zeros(0)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, nb, b)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        if self.d.size != self.C.shape[0]:
            raise ValueError("C and d row counts differ")
        k = 0 if self.tail_diag is None else np.asarray(self.tail_diag).size
        self.tail_diag = np.zeros(0) if k == 0 else np.asarray(self.tail_diag, dtype=float).reshape(-1)
        if np.any(self.tail_diag <= 0):
            raise ValueError("tail Hessian must be positive")
        self.tail_g = np.zeros(k) if self.tail_g is None else np.asarray(self.tail_g, dtype=float).reshape(k)
        self.tail_C = (
            np.zeros((self.d.size, k)) if self.tail_C is None
            else np.asarray(self.tail_C, dtype=float).reshape(self.d.size, k)
        )

    @property
    def shape(self):
        return self.g.shape


@dataclass
class BlockQpResult:
    x: np.ndarray  # (nb, b)
    u: np.ndarray  # tail
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray  # (nb, m_b)
    iterations: int
    kkt_residual: float
    eq_residual: float
    ineq_violation: float


def solve_block_interior_point(qp, x0=None, tol=1e-10, max_iter=100):
    """Mehrotra predictor-corrector for a :class:`BlockQp`.

    Each Newton step factors the ``nb`` small blocks in one batched call and
    couples them through the ``m_eq x m_eq`` Schur complement of the
    equality rows, so the cost is linear in the number of blocks. ``H``
    must be positive definite.
    """
    H, G, C, d = qp.H, qp.G, qp.C, qp.d
    nb, b = qp.shape
    m_b, m_eq, k = G.shape[0], d.size, qp.tail_diag.size
    Dt, Ct = qp.tail_diag, qp.tail_C
    x = np.zeros((nb, b)) if x0 is None else np.asarray(x0, dtype=float).reshape(nb, b).copy()
    u = np.zeros(k)
    y = np.zeros(m_eq)
    s = np.maximum(x @ G.T - qp.h, 1.0)
    z = np.ones((nb, m_b))
    scale_p = 1.0 + max(np.abs(d).max(initial=0.0), np.abs(qp.h).max(initial=0.0))
    scale_d = 1.0 + np.abs(qp.g).max(initial=0.0) + np.abs(H).max(initial=0.0)
    n_in = nb * m_b

    def eq_apply(xx, uu):
        return np.einsum("jtb,tb->j", C, xx) + Ct @ uu

    def residuals():
        r_d = x @ H.T + qp.g - np.einsum("jtb,j->tb", C, y) - z @ G
        r_u = Dt * u + qp.tail_g - Ct.T @ y
        r_p = eq_apply(x, u) - d
        r_s = x @ G.T - s - qp.h
        return r_d, r_u, r_p, r_s

    # sparsity pattern of the reduced KKT matrix [[M, 0, C'], [0, Dt, Ct'], [C, Ct, -delta]]
    n_x = nb * b
    blk_r = (np.arange(nb)[:, None, None] * b + np.arange(b)[None, :, None]).repeat(b, axis=2)
    blk_c = np.transpose(blk_r, (0, 2, 1))
    eq_r = (n_x + k + np.arange(m_eq))[:, None, None].repeat(nb, axis=1).repeat(b, axis=2)
    eq_c = np.broadcast_to(np.arange(n_x).reshape(1, nb, b), eq_r.shape)
    tail = n_x + np.arange(k)
    tail_eq_r, tail_eq_c = np.nonzero(Ct)
    delta = 1e-13 * (1.0 + np.abs(H).max())

    def kkt_matrix(M, sign_eq):
        rows = [blk_r.ravel(), eq_r.ravel(), eq_c.ravel(), tail, n_x + k + tail_eq_r, n_x + tail_eq_c,
                n_x + k + np.arange(m_eq)]
        cols = [blk_c.ravel(), eq_c.ravel(), eq_r.ravel(), tail, n_x + tail_eq_c, n_x + k + tail_eq_r,
                n_x + k + np.arange(m_eq)]
        vals = [M.ravel(), C.ravel(), C.ravel(), Dt, Ct[tail_eq_r, tail_eq_c], Ct[tail_eq_r, tail_eq_c],
                np.full(m_eq, sign_eq * delta)]
        size = n_x + k + m_eq
        return sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(size, size))

    def newton(r_d, r_u, r_p, r_s, comp):
        W = z / s
        M = H[None] + np.einsum("ib,ti,ic->tbc", G, W, G)
        K_exact = kkt_matrix(M, 0.0)
        # near the solution z/s grows without bound; strengthen the dual
        # regularisation if the factorisation meets a zero pivot
        for boost in (1.0, 1e4, 1e8):
            try:
                lu = splinalg.splu(kkt_matrix(M, -boost))
                break
            except RuntimeError:
                continue
        else:
            raise SingularKkt("interior-point KKT matrix is singular")
        rhs = np.concatenate([(-r_d + ((comp - z * r_s) / s) @ G).ravel(), -r_u, -r_p])
        sol = lu.solve(rhs)
        for _ in range(3):  # refinement against the unregularised system
            sol = sol + lu.solve(rhs - K_exact @ sol)
        if not np.all(np.isfinite(sol)):
            raise SingularKkt("interior-point KKT matrix is singular")
        dx = sol[:n_x].reshape(nb, b)
        du = sol[n_x : n_x + k]
        w = sol[n_x + k :]
        ds = dx @ G.T + r_s
        dz = (comp - z * ds) / s
        return dx, du, -w, ds, dz

    def max_step(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

    if n_in:
        dx, du, dy, ds, dz = newton(*residuals(), -s * z)
        s = np.maximum(1.0, np.abs(s + ds))
        z = np.maximum(1.0, np.abs(z + dz))

    it = 0
    for it in range(1, max_iter + 1):
        r_d, r_u, r_p, r_s = residuals()
        mu = float(np.sum(s * z)) / n_in if n_in else 0.0
        if (
            max(np.abs(r_p).max(initial=0.0), np.abs(r_s).max(initial=0.0)) <= tol * scale_p
            and max(np.abs(r_d).max(initial=0.0), np.abs(r_u).max(initial=0.0)) <= tol * scale_d
            and mu <= 1e-2 * tol
        ):
            break
        if not np.all(np.isfinite(s)) or not np.all(np.isfinite(z)):
            raise Infeasible("interior-point iterates diverged")
        dx, du, dy, ds, dz = newton(r_d, r_u, r_p, r_s, -s * z)
        if n_in:
            a_aff = min(max_step(s, ds), max_step(z, dz))
            mu_aff = float(np.sum((s + a_aff * ds) * (z + a_aff * dz))) / n_in
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, du, dy, ds, dz = newton(r_d, r_u, r_p, r_s, -s * z - ds * dz + sigma * mu)
            a = min(1.0, 0.995 * min(max_step(s, ds), max_step(z, dz)))
        else:
            a = 1.0
        x, u, y, s, z = x + a * dx, u + a * du, y + a * dy, s + a * ds, z + a * dz
    else:
        raise Infeasible(f"interior-point method did not converge in {max_iter} iterations")
    r_d, r_u, _, _ = residuals()
    kkt = max(np.abs(r_d).max(initial=0.0), np.abs(r_u).max(initial=0.0)) / scale_d
    return BlockQpResult(
        x=x,
        u=u,
        eq_multipliers=y,
        ineq_multipliers=z,
        iterations=it,
        kkt_residual=float(kkt),
        eq_residual=float(np.abs(eq_apply(x, u) - d).max(initial=0.0)),
        ineq_violation=float(max(0.0, (qp.h - x @ G.T).max(initial=0.0))),
    )
