"""Phase identification: angle clustering (PMU) and correlation matching (NPMU).

A phase assignment is a permutation ``perm`` with ``perm[c]`` the system
phase (0=A, 1=B, 2=C) carried by measured channel ``c``.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import AmbiguousCluster, NoPath
from .grid import decompose_subsystems, measured_tree
from .kernels import MAXIMIZE, MINIMIZE, solve_assignment

PHASE_NAMES = "ABC"
CENTERS_DEG = np.array([0.0, -120.0, 120.0])
IDENTITY = (0, 1, 2)

CURRENT = "current"
VOLTAGE = "voltage"


@dataclass(frozen=True)
class PhaseAssignment:
    node: str
    perm: tuple
    objective: float = float("nan")
    method: str = ""
    tie: bool = False

    def __post_init__(self):
        if sorted(self.perm) != [0, 1, 2]:
            raise ValueError(f"{self.perm} is not a permutation of three phases")

    def label(self):
        return "".join(PHASE_NAMES[p] for p in self.perm)


def compose(parent_perm, match):
    """System phases of the child channels given the parent's assignment.

    ``match[q]`` is the parent channel matched with child channel ``q``.
    """
    return tuple(parent_perm[match[q]] for q in range(3))


def count_phase_errors(assignments, truth):
    """Number of nodes whose recovered permutation differs from ``truth``."""
    return sum(1 for n, p in truth.items() if n in assignments and tuple(assignments[n].perm) != tuple(p))


# ------------------------------------------------------------------ PMU path


def circular_distance_deg(a, b):
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 180.0) % 360.0 - 180.0
    return np.abs(d)


def mean_angle_deg(v):
    """Circular mean of the phasor angles of each channel, in degrees."""
    v = np.asarray(v)
    unit = v / np.where(np.abs(v) > 0, np.abs(v), 1.0)
    return np.degrees(np.angle(unit.mean(axis=0)))


def cluster_pmu_phases(angles_deg, node=""):
    """Assign each channel to the nearest of the 0, -120 and +120 degree centers."""
    angles = np.asarray(angles_deg, dtype=float)
    if angles.shape != (3,):
        raise ValueError("need one mean angle per channel")
    dist = circular_distance_deg(angles[:, None], CENTERS_DEG[None, :])
    perm = tuple(int(k) for k in np.argmin(dist, axis=1))
    if len(set(perm)) != 3:
        raise AmbiguousCluster(f"channels of node {node!r} map to phases {perm}")
    return PhaseAssignment(node, perm, float(dist[np.arange(3), list(perm)].sum()), "pmu-angle")


def identify_phases_pmu(meas):
    """Cluster the mean voltage angle of every measured node."""
    if not meas.is_phasor:
        raise ValueError("angle clustering needs phasor measurements")
    return {n: cluster_pmu_phases(mean_angle_deg(s.v), n) for n, s in meas.nodes.items()}


# ----------------------------------------------------------------- NPMU path


@dataclass
class CorrelationMatrix:
    """Pearson correlation between parent channel ``p`` (rows) and child channel ``q`` (columns)."""

    rho: np.ndarray
    kind: str
    parent: str = ""
    child: str = ""
    undefined: np.ndarray = None


def correlation_matrix(parent_series, child_series, kind=CURRENT, parent="", child=""):
    """Cross-correlation of magnitude series; zero-variance pairs are flagged and set to 0."""
    x = np.abs(np.asarray(parent_series))
    y = np.abs(np.asarray(child_series))
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"series shapes differ or are not (T, 3): {x.shape} vs {y.shape}")
    if x.shape[0] < 3:
        raise ValueError("correlation needs at least three samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sx = np.sqrt((xc**2).sum(axis=0))
    sy = np.sqrt((yc**2).sum(axis=0))
    den = sx[:, None] * sy[None, :]
    undefined = den <= 1e-12 * max(1.0, float(den.max()))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(undefined, 0.0, (xc.T @ yc) / np.where(undefined, 1.0, den))
    return CorrelationMatrix(np.clip(rho, -1.0, 1.0), kind, parent, child, undefined)


def _subsystem_children(g, subsystems):
    parent, via = measured_tree(g, subsystems)
    children = {}
    for node, p in parent.items():
        if p is not None:
            children.setdefault(p, []).append(node)
    for p in children:
        children[p].sort(key=g.node_index)
    return parent, via, children


class NpmuPhaseIdentifier(BaseEstimator):
    """Breadth-first phase assignment over the tree of measured nodes.

    Children that have measured descendants are matched to their parent by
    current correlation (parent outflow into the connecting subsystem vs.
    child inflow); leaves are matched by voltage correlation, maximised.

    Parameters
    ----------
    sense : {"max", "min"}
        Optimisation sense for the current correlation.
    root_assignment : tuple
        Known permutation at the root node.
    """

    def __init__(self, sense=MAXIMIZE, root_assignment=IDENTITY):
        self.sense = sense
        self.root_assignment = root_assignment

    def fit(self, g, meas, switch_states=None, subsystems=None):
        if subsystems is None:
            subsystems = decompose_subsystems(g, switch_states)
        parent, via, children = _subsystem_children(g, subsystems)
        missing = [n for n in meas.nodes if n not in parent]
        if missing:
            raise NoPath(f"measured nodes {missing} are not reachable from {g.slack}")
        root = g.slack
        self.assignments_ = {root: PhaseAssignment(root, tuple(self.root_assignment), 0.0, "root")}
        self.correlations_ = {}
        queue = deque([root])
        while queue:
            p = queue.popleft()
            for c in children.get(p, []):
                sub = via[c]
                leaf = not children.get(c)
                if leaf:
                    cm = correlation_matrix(meas.nodes[p].v, meas.nodes[c].v, VOLTAGE, p, c)
                    sense = MAXIMIZE
                else:
                    first_hop = sub.path[1]
                    out = meas.nodes[p].branch_current(first_hop)
                    cm = correlation_matrix(out, meas.nodes[c].i_in, CURRENT, p, c)
                    sense = self.sense
                res = solve_assignment(cm.rho, sense)
                perm = compose(self.assignments_[p].perm, res.perm)
                self.assignments_[c] = PhaseAssignment(c, perm, res.objective, cm.kind, res.tie)
                self.correlations_[(p, c)] = cm
                queue.append(c)
        return self

    def predict(self, g, meas, switch_states=None, subsystems=None):
        return self.fit(g, meas, switch_states, subsystems).assignments_


def identify_phases_npmu(g, meas, switch_states=None, sense=MAXIMIZE, root_assignment=IDENTITY):
    return NpmuPhaseIdentifier(sense, root_assignment).predict(g, meas, switch_states)


def identify_phases(g, meas, switch_states=None, sense=MAXIMIZE):
    """Angle clustering for phasor data, correlation matching otherwise."""
    if meas.is_phasor:
        return identify_phases_pmu(meas)
    return identify_phases_npmu(g, meas, switch_states, sense)


def unscramble(meas, assignments):
    """Reorder every node's channels into system phase order A, B, C."""
    from .simulate import MeasurementSet, NodeSeries

    nodes = {}
    for n, s in meas.nodes.items():
        perm = assignments[n].perm if n in assignments else IDENTITY
        inv = np.argsort(perm)  # column holding system phase k
        nodes[n] = NodeSeries(
            n, s.v[:, inv], s.i_in[:, inv], {d: c[:, inv] for d, c in s.i_out.items()}, s.upstream
        )
    return MeasurementSet(meas.kind, meas.dt, nodes, {}, dict(meas.energies))


__all__ = [
    "MINIMIZE",
    "MAXIMIZE",
    "PhaseAssignment",
    "CorrelationMatrix",
    "cluster_pmu_phases",
    "correlation_matrix",
    "identify_phases",
    "identify_phases_npmu",
    "identify_phases_pmu",
    "NpmuPhaseIdentifier",
    "unscramble",
]
