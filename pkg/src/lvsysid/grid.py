"""Grid graph, cable catalog and decomposition into measured subsystems."""

import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .exceptions import (
    DanglingReference,
    DisconnectedGraph,
    GridSchemaError,
    UnknownCable,
    UnobservableBranch,
)
from .sequence import sequence_to_impedance

OPEN = "open"
CLOSED = "closed"

#: Default zero- to positive-sequence impedance ratio for catalog entries
#: that do not state their zero-sequence values.
DEFAULT_Z0_RATIO = 4.0

GRID_SCHEMA = {
    "type": "object",
    "required": ["nodes", "segments", "cable_catalog", "measured_nodes", "slack"],
    "properties": {
        "name": {"type": "string"},
        "slack": {
            "type": "object",
            "required": ["node", "voltage"],
            "properties": {
                "node": {"type": ["string", "integer"]},
                "voltage": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "cable_catalog": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "r_per_len", "x_per_len"],
                "properties": {
                    "id": {"type": "string"},
                    "r_per_len": {"type": "number", "exclusiveMinimum": 0},
                    "x_per_len": {"type": "number", "minimum": 0},
                    "r0_per_len": {"type": "number", "exclusiveMinimum": 0},
                    "x0_per_len": {"type": "number", "minimum": 0},
                    "cross_section": {"type": ["string", "number"]},
                },
            },
        },
        "nodes": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "loads": {
                        "type": "array",
                        "items": {"type": "boolean"},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
        },
        "segments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["from", "to", "length", "cable"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "from": {"type": ["string", "integer"]},
                    "to": {"type": ["string", "integer"]},
                    "length": {"type": "number", "exclusiveMinimum": 0},
                    "cable": {"type": "string"},
                },
            },
        },
        "switches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "nodes"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "nodes": {
                        "type": "array",
                        "items": {"type": ["string", "integer"]},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "segment": {"type": ["string", "integer", "null"]},
                    "state": {"enum": [OPEN, CLOSED]},
                },
            },
        },
        "measured_nodes": {
            "type": "array",
            "minItems": 1,
            "items": {"type": ["string", "integer"]},
        },
    },
}


@dataclass(frozen=True)
class CableType:
    id: str
    r_per_len: float  # ohm/km
    x_per_len: float  # ohm/km
    cross_section: str = ""
    r0_per_len: float = None
    x0_per_len: float = None

    def __post_init__(self):
        if not self.r_per_len > 0:
            raise GridSchemaError(f"cable {self.id}: r_per_len must be positive")
        if self.x_per_len < 0:
            raise GridSchemaError(f"cable {self.id}: x_per_len must be non-negative")

    @property
    def z1(self):
        return complex(self.r_per_len, self.x_per_len)

    @property
    def z0(self):
        if self.r0_per_len is None:
            return DEFAULT_Z0_RATIO * self.z1
        return complex(self.r0_per_len, self.x0_per_len or 0.0)

    @property
    def z_per_len(self):
        """Positive-sequence impedance magnitude per km."""
        return math.hypot(self.r_per_len, self.x_per_len)


class CableCatalog:
    """Candidate cable types, ordered by ascending |z1'|."""

    def __init__(self, types):
        types = sorted(types, key=lambda c: c.z_per_len)
        ids = [c.id for c in types]
        if len(set(ids)) != len(ids):
            raise GridSchemaError("cable catalog ids must be unique")
        zs = [c.z_per_len for c in types]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise GridSchemaError("cable catalog has duplicate |z1'| values")
        self.types = tuple(types)
        self._index = {c.id: i for i, c in enumerate(types)}

    def __len__(self):
        return len(self.types)

    def __eq__(self, other):
        return isinstance(other, CableCatalog) and self.types == other.types

    def __hash__(self):
        return hash(self.types)

    def __iter__(self):
        return iter(self.types)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.types[self.index(key)]
        return self.types[key]

    def __contains__(self, cable_id):
        return cable_id in self._index

    def index(self, cable_id):
        try:
            return self._index[cable_id]
        except KeyError:
            raise UnknownCable(f"unknown cable type {cable_id!r}") from None

    @property
    def z_per_len(self):
        """|z1'| of every type in ohm/km."""
        return np.array([c.z_per_len for c in self.types])


@dataclass(frozen=True)
class Node:
    id: str
    loads: tuple = (False, False, False)

    @property
    def has_load(self):
        return any(self.loads)


@dataclass(frozen=True)
class Segment:
    id: str
    from_node: str
    to_node: str
    length: float  # m
    cable: str

    def __post_init__(self):
        if not self.length > 0:
            raise GridSchemaError(f"segment {self.id}: length must be positive")
        if self.from_node == self.to_node:
            raise GridSchemaError(f"segment {self.id}: endpoints must differ")

    def other(self, node):
        return self.to_node if node == self.from_node else self.from_node

    def impedance_matrix(self, catalog):
        cable = catalog[self.cable]
        return sequence_to_impedance(cable.z0, cable.z1) * (self.length / 1000.0)


@dataclass(frozen=True)
class SwitchJunction:
    """A switch bridging two nodes.

    With ``segment`` set the switch sits in series with that cable at the
    first node; without it the switch is a zero-impedance tie.
    """

    id: str
    nodes: tuple
    true_state: str = CLOSED
    segment: str = None

    @property
    def is_tie(self):
        return self.segment is None


@dataclass(frozen=True)
class GridGraph:
    name: str
    nodes: tuple
    segments: tuple
    switches: tuple
    catalog: CableCatalog
    measured: tuple
    slack: str
    v_nominal: float
    _node_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_node_index", {n.id: i for i, n in enumerate(self.nodes)})

    @property
    def node_ids(self):
        return tuple(n.id for n in self.nodes)

    def node_index(self, node_id):
        return self._node_index[node_id]

    def node(self, node_id):
        return self.nodes[self._node_index[node_id]]

    def segment(self, seg_id):
        for s in self.segments:
            if s.id == seg_id:
                return s
        raise KeyError(seg_id)

    def switch(self, sw_id):
        for s in self.switches:
            if s.id == sw_id:
                return s
        raise KeyError(sw_id)

    def is_measured(self, node_id):
        return node_id in self.measured

    def true_switch_states(self):
        return {s.id: s.true_state for s in self.switches}

    def incident(self, node_id):
        """Segments touching ``node_id`` in document order."""
        return [s for s in self.segments if node_id in (s.from_node, s.to_node)]

    def hop_distance(self):
        """Hop count from the slack over all segments and ties."""
        adj = {n: [] for n in self.node_ids}
        for s in self.segments:
            adj[s.from_node].append(s.to_node)
            adj[s.to_node].append(s.from_node)
        for sw in self.switches:
            if sw.is_tie:
                a, b = sw.nodes
                adj[a].append(b)
                adj[b].append(a)
        dist = {self.slack: 0}
        queue = deque([self.slack])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def upstream_segments(self):
        """Parent segment of each node in the breadth-first cable tree from the slack."""
        parent = {self.slack: None}
        queue = deque([self.slack])
        while queue:
            u = queue.popleft()
            for s in self.incident(u):
                v = s.other(u)
                if v not in parent:
                    parent[v] = s
                    queue.append(v)
        return parent

    def active_topology(self, switch_states=None):
        """Return (active segment ids, closed tie pairs) for a switch-state map."""
        states = self.true_switch_states()
        if switch_states:
            states.update({k: _norm_state(v) for k, v in switch_states.items()})
        opened = {sw.segment for sw in self.switches if not sw.is_tie and states[sw.id] == OPEN}
        active = [s.id for s in self.segments if s.id not in opened]
        ties = [tuple(sw.nodes) for sw in self.switches if sw.is_tie and states[sw.id] == CLOSED]
        return active, ties

    def energized(self, switch_states=None):
        """Nodes and segment ids connected to the slack in the active topology."""
        active, ties = self.active_topology(switch_states)
        active = set(active)
        adj = {n: [] for n in self.node_ids}
        for s in self.segments:
            if s.id in active:
                adj[s.from_node].append(s.to_node)
                adj[s.to_node].append(s.from_node)
        for a, b in ties:
            adj[a].append(b)
            adj[b].append(a)
        seen = {self.slack}
        queue = deque([self.slack])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        segs = {s.id for s in self.segments if s.id in active and s.from_node in seen}
        return seen, segs


def _norm_state(state):
    if isinstance(state, bool):
        return CLOSED if state else OPEN
    s = str(state).lower()
    if s not in (OPEN, CLOSED):
        raise ValueError(f"invalid switch state {state!r}")
    return s


@dataclass(frozen=True)
class Subsystem:
    id: str
    k: str
    l: str
    interior: tuple
    segments: tuple
    deenergized: bool = False

    @property
    def n_s(self):
        return len(self.segments)

    @property
    def lengths(self):
        return np.array([s.length for s in self.segments])

    @property
    def path(self):
        return (self.k,) + self.interior + (self.l,)


# --------------------------------------------------------------- construction


def build_graph(doc):
    """Validate a grid-description mapping and build an immutable :class:`GridGraph`."""
    try:
        jsonschema.validate(doc, GRID_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise GridSchemaError(f"grid document invalid at {where}: {exc.message}") from None

    catalog = CableCatalog(
        CableType(
            id=c["id"],
            r_per_len=float(c["r_per_len"]),
            x_per_len=float(c["x_per_len"]),
            cross_section=str(c.get("cross_section", "")),
            r0_per_len=c.get("r0_per_len"),
            x0_per_len=c.get("x0_per_len"),
        )
        for c in doc["cable_catalog"]
    )

    nodes = []
    for n in doc["nodes"]:
        nodes.append(Node(str(n["id"]), tuple(n.get("loads", (False, False, False)))))
    node_ids = [n.id for n in nodes]
    if len(set(node_ids)) != len(node_ids):
        raise GridSchemaError("node ids must be unique")
    known = set(node_ids)

    segments = []
    for i, s in enumerate(doc["segments"]):
        sid = str(s.get("id", f"s{i}"))
        a, b = str(s["from"]), str(s["to"])
        for end in (a, b):
            if end not in known:
                raise DanglingReference(f"segment {sid} references undefined node {end!r}")
        if s["cable"] not in catalog:
            raise UnknownCable(f"segment {sid} references undefined cable {s['cable']!r}")
        segments.append(Segment(sid, a, b, float(s["length"]), s["cable"]))
    seg_ids = [s.id for s in segments]
    if len(set(seg_ids)) != len(seg_ids):
        raise GridSchemaError("segment ids must be unique")

    switches = []
    for sw in doc.get("switches", []) or []:
        sid = str(sw["id"])
        pair = tuple(str(x) for x in sw["nodes"])
        for end in pair:
            if end not in known:
                raise DanglingReference(f"switch {sid} references undefined node {end!r}")
        seg = sw.get("segment")
        if seg is not None:
            seg = str(seg)
            if seg not in seg_ids:
                raise DanglingReference(f"switch {sid} references undefined segment {seg!r}")
            s = segments[seg_ids.index(seg)]
            if set(pair) != {s.from_node, s.to_node}:
                raise GridSchemaError(f"switch {sid} nodes do not match segment {seg}")
        switches.append(SwitchJunction(sid, pair, _norm_state(sw.get("state", CLOSED)), seg))

    measured = tuple(str(m) for m in doc["measured_nodes"])
    for m in measured:
        if m not in known:
            raise DanglingReference(f"measured node {m!r} is undefined")
    slack = str(doc["slack"]["node"])
    if slack not in known:
        raise DanglingReference(f"slack node {slack!r} is undefined")
    if slack not in measured:
        raise GridSchemaError(f"slack node {slack!r} must be measured")
    for sw in switches:
        if not any(n in measured for n in sw.nodes):
            raise GridSchemaError(f"switch {sw.id} has no measured terminal")

    g = GridGraph(
        name=str(doc.get("name", "grid")),
        nodes=tuple(nodes),
        segments=tuple(segments),
        switches=tuple(switches),
        catalog=catalog,
        measured=measured,
        slack=slack,
        v_nominal=float(doc["slack"]["voltage"]),
    )
    all_closed = {sw.id: CLOSED for sw in switches}
    reached, _ = g.energized(all_closed)
    missing = [n for n in node_ids if n not in reached]
    if missing:
        raise DisconnectedGraph(f"nodes not connected to slack: {', '.join(missing)}")
    return g


def load_grid(path):
    with open(path) as fh:
        return build_graph(yaml.safe_load(fh))


def default_grid_path():
    return Path(str(resources.files("lvsysid") / "grids" / "residential_lv_30.yaml"))


def load_default_grid():
    return load_grid(default_grid_path())


# -------------------------------------------------------------- decomposition


def _roman(n):
    vals = [(10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")]
    out = ""
    for v, sym in vals:
        while n >= v:
            out += sym
            n -= v
    return out


def decompose_subsystems(g, switch_states=None):
    """Split the cable graph into paths between measured nodes.

    Every segment lands in exactly one subsystem. A subsystem is flagged
    ``deenergized`` when any of its segments is cut off from the slack
    under ``switch_states``.
    """
    degree = {n: 0 for n in g.node_ids}
    for s in g.segments:
        degree[s.from_node] += 1
        degree[s.to_node] += 1
    for sw in g.switches:
        if sw.is_tie:
            for n in sw.nodes:
                degree[n] += 1

    seg_pos = {s.id: i for i, s in enumerate(g.segments)}
    used = set()
    raw = []
    for start in g.measured:
        for seg in g.incident(start):
            if seg.id in used:
                continue
            path_nodes, path_segs = [start], [seg]
            cur = seg.other(start)
            while not g.is_measured(cur):
                if degree[cur] != 2:
                    raise UnobservableBranch(
                        f"unmeasured node {cur!r} has degree {degree[cur]}; "
                        "cannot form a subsystem"
                    )
                path_nodes.append(cur)
                nxt = [s for s in g.incident(cur) if s.id != path_segs[-1].id]
                path_segs.append(nxt[0])
                cur = nxt[0].other(cur)
            path_nodes.append(cur)
            used.update(s.id for s in path_segs)
            raw.append((path_nodes, path_segs))

    hops = g.hop_distance()
    _, live = g.energized(switch_states)
    raw.sort(key=lambda item: min(seg_pos[s.id] for s in item[1]))
    subsystems = []
    for idx, (nodes, segs) in enumerate(raw, start=1):
        a, b = nodes[0], nodes[-1]
        if (hops[b], b) < (hops[a], a):
            nodes, segs = nodes[::-1], segs[::-1]
        dead = not all(s.id in live for s in segs)
        subsystems.append(
            Subsystem(
                id=_roman(idx),
                k=nodes[0],
                l=nodes[-1],
                interior=tuple(nodes[1:-1]),
                segments=tuple(segs),
                deenergized=dead,
            )
        )
    return subsystems


def subsystem_true_impedance(sub, catalog):
    """Series resistance, reactance and |z| (ohm) of a subsystem from its cables."""
    r = sum(s.length / 1000.0 * catalog[s.cable].r_per_len for s in sub.segments)
    x = sum(s.length / 1000.0 * catalog[s.cable].x_per_len for s in sub.segments)
    return r, x, math.hypot(r, x)


def true_type_vector(sub, catalog):
    return tuple(catalog.index(s.cable) for s in sub.segments)


def measured_tree(g, subsystems):
    """Parent map of measured nodes, following energized subsystems from the slack.

    A measured node reached through several subsystems keeps the first one
    in breadth-first order.
    """
    children = {}
    for sub in subsystems:
        if sub.deenergized:
            continue
        children.setdefault(sub.k, []).append(sub)
    parent = {g.slack: None}
    via = {}
    queue = deque([g.slack])
    while queue:
        u = queue.popleft()
        for sub in children.get(u, []):
            if sub.l not in parent:
                parent[sub.l] = u
                via[sub.l] = sub
                queue.append(sub.l)
    return parent, via


def open_ended(g, sub, switch_states=None):
    """True if nothing energized continues past the subsystem's far node.

    The outflow at such a node is zero by construction, so the participation
    factor carries no information.
    """
    active, ties = g.active_topology(switch_states)
    active = set(active)
    nodes, live = g.energized(switch_states)
    last = sub.segments[-1].id
    onward = [s for s in g.incident(sub.l) if s.id != last and s.id in live]
    onward_ties = [t for t in ties if sub.l in t]
    return not onward and not onward_ties and not g.node(sub.l).has_load
