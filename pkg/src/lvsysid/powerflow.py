"""Unbalanced three-phase power flow by fixed-point current injection.

Loads are wye-connected constant-power per phase. Closed tie switches are
zero-impedance, so their end nodes are merged into one electrical bus; the
tie currents are recovered afterwards from Kirchhoff's current law.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import PowerFlowDiverged

S_BASE = 100e3  # VA, per-unit base for convergence checks


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class PowerFlowResult:
    """Solution for ``T`` time steps.

    ``v`` is ``(T, N, 3)`` node voltages; ``i_seg`` is ``(T, S, 3)`` segment
    currents flowing from ``from_node`` to ``to_node``; ``i_tie`` maps a
    closed tie ``(a, b)`` to the ``(T, 3)`` current flowing from ``a`` to
    ``b``; ``i_load`` is ``(T, N, 3)`` current drawn by loads; ``i_source``
    is the ``(T, 3)`` slack infeed.
    """

    v: np.ndarray
    i_seg: np.ndarray
    i_tie: dict
    i_load: np.ndarray
    i_source: np.ndarray
    iterations: int
    mismatch: float
    energized: np.ndarray


class PowerFlowModel:
    """Pre-factored nodal model of one grid under one switch configuration."""

    def __init__(self, g, switch_states=None):
        self.g = g
        self.node_ids = g.node_ids
        n = len(self.node_ids)
        active, ties = g.active_topology(switch_states)
        live_nodes, live_segs = g.energized(switch_states)
        self.active = [s for s in g.segments if s.id in live_segs]
        self.ties = [t for t in ties if t[0] in live_nodes]
        self.seg_index = {s.id: i for i, s in enumerate(g.segments)}
        self.energized_mask = np.array([nid in live_nodes for nid in self.node_ids])

        uf = _UnionFind(range(n))
        for a, b in self.ties:
            uf.union(g.node_index(a), g.node_index(b))
        slack_idx = g.node_index(g.slack)
        roots = sorted({uf.find(i) for i in range(n) if self.energized_mask[i]})
        slack_root = uf.find(slack_idx)
        free_roots = [r for r in roots if r != slack_root]
        self.bus_of = np.full(n, -1)
        for i in range(n):
            if self.energized_mask[i]:
                r = uf.find(i)
                self.bus_of[i] = -1 if r == slack_root else free_roots.index(r)
        self.n_free = len(free_roots)
        self.slack_idx = slack_idx
        self.uf = uf

        nf = 3 * self.n_free
        Yff = np.zeros((nf, nf), dtype=complex)
        Yfs = np.zeros((nf, 3), dtype=complex)
        self.y_seg = {}
        for s in self.active:
            y = np.linalg.inv(s.impedance_matrix(g.catalog))
            self.y_seg[s.id] = y
            ba = self.bus_of[g.node_index(s.from_node)]
            bb = self.bus_of[g.node_index(s.to_node)]
            if ba == bb:
                continue  # both ends on the same bus: no current
            for bi, bj in ((ba, bb), (bb, ba)):
                if bi < 0:
                    continue
                Yff[3 * bi : 3 * bi + 3, 3 * bi : 3 * bi + 3] += y
                if bj < 0:
                    Yfs[3 * bi : 3 * bi + 3] -= y
                else:
                    Yff[3 * bi : 3 * bi + 3, 3 * bj : 3 * bj + 3] -= y
        self.Yff, self.Yfs = Yff, Yfs
        self.lu = linalg.lu_factor(Yff) if nf else None
        v = g.v_nominal
        self.v_slack = v * np.exp(1j * np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3]))
        self.i_base = S_BASE / v

    def _bus_loads(self, s, v_bus):
        """Load currents per node (T, N, 3) given bus voltages (T, B, 3)."""
        T = s.shape[0]
        v_node = np.zeros((T, len(self.node_ids), 3), dtype=complex)
        for i in range(len(self.node_ids)):
            b = self.bus_of[i]
            if not self.energized_mask[i]:
                continue
            v_node[:, i] = self.v_slack if b < 0 else v_bus[:, b]
        with np.errstate(divide="ignore", invalid="ignore"):
            i_load = np.where(s != 0, np.conj(s / v_node), 0.0)
        return v_node, i_load

    def _inject(self, i_load):
        """Net current injected into each free bus (T, 3*n_free)."""
        T = i_load.shape[0]
        inj = np.zeros((T, self.n_free, 3), dtype=complex)
        for i in range(len(self.node_ids)):
            b = self.bus_of[i]
            if b >= 0:
                inj[:, b] -= i_load[:, i]
        return inj.reshape(T, -1)

    def solve(self, p, q, tol=1e-10, max_iter=100):
        """Solve for per-node, per-phase loads ``p + jq`` of shape (T, N, 3)."""
        s = np.asarray(p, dtype=float) + 1j * np.asarray(q, dtype=float)
        if s.ndim == 2:
            s = s[None]
        T = s.shape[0]
        s = np.where(self.energized_mask[None, :, None], s, 0.0)
        vf = np.tile(self.v_slack, (T, self.n_free))
        rhs_slack = self.Yfs @ self.v_slack
        it = 0
        while True:
            v_bus = vf.reshape(T, self.n_free, 3)
            _, i_load = self._bus_loads(s, v_bus)
            inj = self._inject(i_load)
            if self.n_free:
                resid = vf @ self.Yff.T + rhs_slack - inj
                mismatch = float(np.abs(resid).max()) / self.i_base
            else:
                mismatch = 0.0
            if mismatch < tol:
                break
            if it >= max_iter:
                raise PowerFlowDiverged(mismatch, it)
            vf = linalg.lu_solve(self.lu, (inj - rhs_slack).T).T
            it += 1
        v_bus = vf.reshape(T, self.n_free, 3)
        v_node, i_load = self._bus_loads(s, v_bus)
        return self._branch_flows(v_node, i_load, it, mismatch)

    def _branch_flows(self, v_node, i_load, iterations, mismatch):
        g = self.g
        T = v_node.shape[0]
        i_seg = np.zeros((T, len(g.segments), 3), dtype=complex)
        for sg in self.active:
            a, b = g.node_index(sg.from_node), g.node_index(sg.to_node)
            i_seg[:, self.seg_index[sg.id]] = (v_node[:, a] - v_node[:, b]) @ self.y_seg[sg.id].T
        # excess[n] = current arriving over cables minus current consumed
        excess = -i_load.copy()
        for sg in self.active:
            j = self.seg_index[sg.id]
            excess[:, g.node_index(sg.to_node)] += i_seg[:, j]
            excess[:, g.node_index(sg.from_node)] -= i_seg[:, j]
        i_tie = self._tie_flows(excess)
        si = self.slack_idx
        i_source = -excess[:, si].copy()
        for (a, b), cur in i_tie.items():
            if a == g.slack:
                i_source += cur
            elif b == g.slack:
                i_source -= cur
        return PowerFlowResult(
            v=v_node,
            i_seg=i_seg,
            i_tie=i_tie,
            i_load=i_load,
            i_source=i_source,
            iterations=iterations,
            mismatch=mismatch,
            energized=self.energized_mask.copy(),
        )

    def _tie_flows(self, excess):
        """Distribute nodal excess over the tie forest of each merged bus."""
        g = self.g
        adj = {}
        for a, b in self.ties:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        flows = {}
        visited = set()
        for a, _ in self.ties:
            if a in visited:
                continue
            group = []
            stack = [a]
            seen = {a}
            while stack:
                u = stack.pop()
                group.append(u)
                for w in adj[u]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            root = g.slack if g.slack in seen else min(seen, key=g.node_index)
            parent = {root: None}
            order = [root]
            for u in order:
                for w in sorted(adj[u], key=g.node_index):
                    if w not in parent:
                        parent[w] = u
                        order.append(w)
            if len(order) - 1 != sum(len(adj[u]) for u in order) // 2:
                raise ValueError("closed tie switches form a loop")
            acc = {u: excess[:, g.node_index(u)].copy() for u in order}
            for u in reversed(order[1:]):
                pu = parent[u]
                # the tie carries u's surplus towards its parent
                flow_u_to_p = acc[u]
                acc[pu] = acc[pu] + flow_u_to_p
                if (u, pu) in self.ties:
                    flows[(u, pu)] = flow_u_to_p
                else:
                    flows[(pu, u)] = -flow_u_to_p
            visited |= seen
        return flows


def solve_powerflow(g, p, q, switch_states=None, tol=1e-10, max_iter=100):
    """Convenience wrapper: build the nodal model and solve once."""
    return PowerFlowModel(g, switch_states).solve(p, q, tol=tol, max_iter=max_iter)


def kirchhoff_residual(g, result):
    """Largest nodal current imbalance in per unit, source node included."""
    T = result.v.shape[0]
    net = -result.i_load.copy()
    for j, sg in enumerate(g.segments):
        net[:, g.node_index(sg.to_node)] += result.i_seg[:, j]
        net[:, g.node_index(sg.from_node)] -= result.i_seg[:, j]
    for (a, b), cur in result.i_tie.items():
        net[:, g.node_index(a)] -= cur
        net[:, g.node_index(b)] += cur
    net[:, g.node_index(g.slack)] += result.i_source
    return float(np.abs(net).max()) / (S_BASE / g.v_nominal) if T else 0.0


def power_balance(g, result):
    """Return (source, load, loss) active power in W, shape (T,) each."""
    si = g.node_index(g.slack)
    p_src = np.real(np.sum(result.v[:, si] * np.conj(result.i_source), axis=-1))
    p_load = np.real(np.sum(result.v * np.conj(result.i_load), axis=(-1, -2)))
    loss = np.zeros_like(p_src)
    for j, sg in enumerate(g.segments):
        dv = result.v[:, g.node_index(sg.from_node)] - result.v[:, g.node_index(sg.to_node)]
        loss += np.real(np.sum(dv * np.conj(result.i_seg[:, j]), axis=-1))
    return p_src, p_load, loss
