"""Synthetic household load profiles and noisy PMU / NPMU measurement sets."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .powerflow import PowerFlowModel
from .sequence import positive_sequence

PMU = "pmu"
NPMU = "npmu"
BASE_STEP = 60  # s, resolution profiles are generated at


# ------------------------------------------------------------------- profiles


@dataclass
class LoadProfile:
    node: str
    p: np.ndarray  # (T, 3) W
    q: np.ndarray  # (T, 3) var
    dt: float  # s

    @property
    def T(self):
        return self.p.shape[0]

    @property
    def energy(self):
        """Consumed active energy in Wh over the horizon."""
        return float(self.p.sum() * self.dt / 3600.0)


def _daily_shape(minutes):
    h = (minutes % 1440) / 60.0
    morning = np.exp(-0.5 * ((h - 7.5) / 1.2) ** 2)
    noon = 0.5 * np.exp(-0.5 * ((h - 12.5) / 1.5) ** 2)
    evening = 1.4 * np.exp(-0.5 * ((h - 19.5) / 2.0) ** 2)
    return 0.35 + morning + noon + evening


def generate_profiles(n_households, dt=60, T=1440, seed=0, node_ids=None,
                      base_mean=250.0, event_rate=0.5, event_power=1100.0,
                      event_minutes=12.0, pf_range=(0.99, 1.0)):
    """Draw per-phase household load profiles.

    Each household has a lognormal base load following a daily shape, split
    unevenly over the three phases, plus randomly arriving appliance events
    per phase (rate ``event_rate`` per hour at the daily-shape mean).
    Reactive power follows from a per-household, per-phase power factor drawn
    uniformly from ``pf_range`` (lagging).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if dt % BASE_STEP:
        raise ValueError(f"dt must be a multiple of {BASE_STEP} s")
    if n_households == 0:
        return []
    agg = int(dt // BASE_STEP)
    M = T * agg
    rng = np.random.default_rng(seed)
    H = n_households
    minutes = np.arange(M)
    shape = _daily_shape(minutes)
    shape = shape / shape.mean()

    level = rng.lognormal(np.log(base_mean) - 0.5 * 0.4**2, 0.4, size=H)
    split = rng.dirichlet(np.full(3, 2.0), size=H)  # (H, 3)
    wiggle = np.exp(0.25 * _ar1(rng, (H, M, 3), 0.97))
    p = level[:, None, None] * 3 * split[:, None, :] * shape[None, :, None] * wiggle

    # appliance events: Bernoulli starts per minute, rectangular power blocks
    rate = event_rate / 60.0 * shape  # starts per minute
    starts = rng.random((H, M, 3)) < rate[None, :, None]
    hh, tt, ph = np.nonzero(starts)
    dur = np.maximum(1, rng.exponential(event_minutes, size=tt.size).round().astype(int))
    pw = rng.lognormal(np.log(event_power) - 0.5 * 0.5**2, 0.5, size=tt.size)
    delta = np.zeros((H, M + 1, 3))
    np.add.at(delta, (hh, tt, ph), pw)
    np.add.at(delta, (hh, np.minimum(tt + dur, M), ph), -pw)
    p = p + np.cumsum(delta, axis=1)[:, :M]

    pf = rng.uniform(pf_range[0], pf_range[1], size=(H, 3))
    q = p * np.tan(np.arccos(pf))[:, None, :]

    if agg > 1:
        p = p.reshape(H, T, agg, 3).mean(axis=2)
        q = q.reshape(H, T, agg, 3).mean(axis=2)
    if node_ids is None:
        node_ids = [f"hh{i}" for i in range(H)]
    return [LoadProfile(str(node_ids[i]), p[i], q[i], float(dt)) for i in range(H)]


def _ar1(rng, size, phi):
    eps = rng.standard_normal(size) * np.sqrt(1 - phi**2)
    out = np.empty(size)
    out[:, 0] = rng.standard_normal(size[0:1] + size[2:])
    for t in range(1, size[1]):
        out[:, t] = phi * out[:, t - 1] + eps[:, t]
    return out


def load_nodes(g):
    return [n.id for n in g.nodes if n.has_load]


def profiles_for_grid(g, dt=60, T=1440, seed=0, **kw):
    """One profile per load node of ``g``; phases without a load get zero power."""
    nodes = load_nodes(g)
    profiles = generate_profiles(len(nodes), dt, T, seed, node_ids=nodes, **kw)
    for prof in profiles:
        mask = np.array(g.node(prof.node).loads, dtype=float)
        prof.p = prof.p * mask
        prof.q = prof.q * mask
    return profiles


def stack_profiles(g, profiles):
    """Per-node (T, N, 3) active and reactive power arrays."""
    T = profiles[0].T if profiles else 1
    N = len(g.nodes)
    p = np.zeros((T, N, 3))
    q = np.zeros((T, N, 3))
    for prof in profiles:
        i = g.node_index(prof.node)
        p[:, i] += prof.p
        q[:, i] += prof.q
    return p, q


# ---------------------------------------------------------------- measurement


@dataclass
class NoiseModel:
    """Gaussian measurement noise, ``std = three_sigma / 3 * reading``.

    Current readings below ``floor_fraction * current_rating`` get the noise
    level of that floor. Phasor angles (PMU only) get an absolute error with
    ``std = three_sigma_angle / 3 * pi`` radians.
    """

    three_sigma_v: float = 0.0
    three_sigma_i: float = 0.0
    seed: int = 0
    three_sigma_angle: float = None
    current_rating: float = 100.0
    floor_fraction: float = 0.01

    def __post_init__(self):
        if self.three_sigma_v < 0 or self.three_sigma_i < 0:
            raise ValueError("noise levels must be non-negative")
        if self.three_sigma_angle is not None and self.three_sigma_angle < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def sigma_angle(self):
        s = self.three_sigma_v if self.three_sigma_angle is None else self.three_sigma_angle
        return s / 3.0 * np.pi

    def current_noise_floor(self):
        """Std of a current reading at the device rating (A)."""
        return self.three_sigma_i / 3.0 * self.current_rating

    @property
    def is_zero(self):
        return self.three_sigma_v == 0 and self.three_sigma_i == 0 and self.sigma_angle == 0


@dataclass
class NodeSeries:
    """Measured quantities at one node; channels on the last axis.

    ``i_in`` arrives from the upstream cable (source infeed at the slack);
    ``i_out[n]`` leaves towards neighbour ``n``.
    """

    node: str
    v: np.ndarray
    i_in: np.ndarray
    i_out: dict
    upstream: str = None

    def branch_current(self, neighbour):
        """Current leaving the node towards ``neighbour`` (sign-flipped inflow upstream)."""
        if neighbour == self.upstream:
            return -self.i_in
        return self.i_out[neighbour]


@dataclass
class MeasurementSet:
    kind: str
    dt: float
    nodes: dict
    scramble: dict = field(default_factory=dict)
    energies: dict = field(default_factory=dict)

    @property
    def T(self):
        return next(iter(self.nodes.values())).v.shape[0]

    @property
    def is_phasor(self):
        return self.kind == PMU

    def window(self, start, stop):
        """Copy restricted to time steps ``start:stop``."""
        nodes = {
            k: NodeSeries(n.node, n.v[start:stop], n.i_in[start:stop],
                          {d: c[start:stop] for d, c in n.i_out.items()}, n.upstream)
            for k, n in self.nodes.items()
        }
        return MeasurementSet(self.kind, self.dt, nodes, dict(self.scramble), dict(self.energies))


@dataclass
class Simulation:
    """Noise-free ground truth for one scenario."""

    g: object
    switch_states: dict
    profiles: list
    result: object
    dt: float

    @property
    def T(self):
        return self.result.v.shape[0]

    def node_voltage(self, node):
        return self.result.v[:, self.g.node_index(node)]

    def segment_current(self, seg_id, towards=None):
        """Current on a segment, positive towards ``towards`` (default: to_node)."""
        g = self.g
        j = [s.id for s in g.segments].index(seg_id)
        cur = self.result.i_seg[:, j]
        if towards is not None and towards == g.segments[j].from_node:
            return -cur
        return cur

    def tie_current(self, a, b):
        """Current on a closed tie flowing from ``a`` to ``b``; zero if open."""
        if (a, b) in self.result.i_tie:
            return self.result.i_tie[(a, b)]
        if (b, a) in self.result.i_tie:
            return -self.result.i_tie[(b, a)]
        return np.zeros((self.T, 3), dtype=complex)

    def exact_series(self, node):
        """Noise-free phasor series at ``node`` in the measurement layout."""
        g = self.g
        up = g.upstream_segments()[node]
        v = self.node_voltage(node)
        if node == g.slack:
            i_in = self.result.i_source.copy()
            upstream = None
        else:
            i_in = self.segment_current(up.id, towards=node)
            upstream = up.other(node)
        i_out = {}
        for s in g.incident(node):
            nb = s.other(node)
            if nb == upstream:
                continue
            i_out[nb] = self.segment_current(s.id, towards=nb)
        for sw in g.switches:
            if sw.is_tie and node in sw.nodes:
                nb = sw.nodes[1] if sw.nodes[0] == node else sw.nodes[0]
                i_out[nb] = self.tie_current(node, nb)
        return NodeSeries(node, v, i_in, i_out, upstream)

    def node_energy(self, node):
        """Smart-meter total of a node: three-phase active energy in Wh."""
        i = self.g.node_index(node)
        p = np.real(self.result.v[:, i] * np.conj(self.result.i_load[:, i])).sum()
        return float(p * self.dt / 3600.0)


def simulate(g, profiles, switch_states=None, tol=1e-10, max_iter=100):
    """Solve the power flow for every time step of ``profiles``."""
    p, q = stack_profiles(g, profiles)
    model = PowerFlowModel(g, switch_states)
    result = model.solve(p, q, tol=tol, max_iter=max_iter)
    states = g.true_switch_states()
    if switch_states:
        states.update(switch_states)
    dt = profiles[0].dt if profiles else 60.0
    return Simulation(g, states, profiles, result, dt)


def _noisy(values, rel_sigma, rng, phasor, ang_sigma, floor=0.0):
    mag = np.abs(values)
    eff = np.maximum(mag, floor)
    noisy_mag = mag + rel_sigma * eff * rng.standard_normal(mag.shape)
    noisy_mag = np.abs(noisy_mag)
    if not phasor:
        return noisy_mag
    ang = np.angle(values) + ang_sigma * rng.standard_normal(mag.shape)
    return noisy_mag * np.exp(1j * ang)


def measure(sim, noise=None, kind=PMU, scramble=False, scramble_seed=None):
    """Turn a simulation into a measurement set at the grid's measured nodes.

    Noise streams are keyed by (seed, node position, quantity) so the result
    does not depend on evaluation order. With ``scramble`` every measured
    node except the slack gets a random channel permutation; ``perm[c]`` is
    the system phase shown on channel ``c``.
    """
    if kind not in (PMU, NPMU):
        raise ValueError(f"unknown measurement kind {kind!r}")
    noise = noise or NoiseModel()
    g = sim.g
    phasor = kind == PMU
    sv, si = noise.three_sigma_v / 3.0, noise.three_sigma_i / 3.0
    sa = noise.sigma_angle
    i_floor = noise.floor_fraction * noise.current_rating
    srng = np.random.default_rng([noise.seed if scramble_seed is None else scramble_seed, 7919])
    nodes, perms = {}, {}
    for pos, node in enumerate(g.measured):
        ex = sim.exact_series(node)
        perm = (0, 1, 2)
        if scramble and node != g.slack:
            perm = tuple(int(x) for x in srng.permutation(3))
        idx = list(perm)

        def quantity(values, q, rel, floor=0.0):
            vals = values[:, idx]
            if noise.is_zero:
                return vals.copy() if phasor else np.abs(vals)
            rng = np.random.default_rng([noise.seed, pos, q])
            return _noisy(vals, rel, rng, phasor, sa, floor)

        v = quantity(ex.v, 0, sv)
        i_in = quantity(ex.i_in, 1, si, i_floor)
        i_out = {}
        for j, nb in enumerate(sorted(ex.i_out, key=g.node_index)):
            i_out[nb] = quantity(ex.i_out[nb], 2 + j, si, i_floor)
        nodes[node] = NodeSeries(node, v, i_in, i_out, ex.upstream)
        perms[node] = perm
    energies = {n: sim.node_energy(n) for n in load_nodes(g)}
    return MeasurementSet(kind, sim.dt, nodes, perms if scramble else {}, energies)


def synthesize_measurements(g, profiles, noise=None, kind=PMU, switch_states=None,
                            scramble=False, scramble_seed=None):
    """Simulate and measure in one call; returns ``(MeasurementSet, Simulation)``."""
    sim = simulate(g, profiles, switch_states)
    return measure(sim, noise, kind, scramble, scramble_seed), sim


# -------------------------------------------------------------------- export

PHASES = "ABC"


def _fmt(x):
    return repr(float(x))


def export_measurements(meas, directory):
    """Write one delimited table per measured node plus ``meta.json``.

    Columns: ``t, phase, toward, v_mag[, v_ang], i_in_mag[, i_in_ang],
    i_out_mag[, i_out_ang]`` with one row per time step, channel and outflow
    direction. SI units, angles in radians.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ph = meas.is_phasor
    header = ["t", "phase", "toward", "v_mag"] + (["v_ang"] if ph else [])
    header += ["i_in_mag"] + (["i_in_ang"] if ph else [])
    header += ["i_out_mag"] + (["i_out_ang"] if ph else [])
    for node, ns in meas.nodes.items():
        with open(directory / f"node_{node}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            dirs = list(ns.i_out) or [""]
            for t in range(ns.v.shape[0]):
                for c in range(3):
                    for d in dirs:
                        row = [t, PHASES[c], d]
                        vals = [ns.v[t, c], ns.i_in[t, c]]
                        vals.append(ns.i_out[d][t, c] if d else 0.0)
                        for x in vals:
                            row.append(_fmt(abs(x)))
                            if ph:
                                row.append(_fmt(np.angle(x)))
                        w.writerow(row)
    meta = {
        "kind": meas.kind,
        "dt": meas.dt,
        "T": meas.T,
        "nodes": {n: {"upstream": s.upstream, "toward": list(s.i_out)} for n, s in meas.nodes.items()},
        "energies_wh": meas.energies,
        "scramble": {n: list(p) for n, p in meas.scramble.items()},
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def import_measurements(directory):
    """Read a directory written by :func:`export_measurements`."""
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    ph = meta["kind"] == PMU
    T = int(meta["T"])
    nodes = {}
    for node, info in meta["nodes"].items():
        dirs = info["toward"]
        v = np.zeros((T, 3), dtype=complex if ph else float)
        i_in = np.zeros_like(v)
        i_out = {d: np.zeros_like(v) for d in dirs}
        with open(directory / f"node_{node}.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                t, c, d = int(row["t"]), PHASES.index(row["phase"]), row["toward"]

                def val(name):
                    m = float(row[f"{name}_mag"])
                    return m * np.exp(1j * float(row[f"{name}_ang"])) if ph else m

                v[t, c] = val("v")
                i_in[t, c] = val("i_in")
                if d:
                    i_out[d][t, c] = val("i_out")
        nodes[node] = NodeSeries(node, v, i_in, i_out, info["upstream"])
    scramble = {n: tuple(p) for n, p in meta.get("scramble", {}).items()}
    return MeasurementSet(meta["kind"], float(meta["dt"]), nodes, scramble,
                          {k: float(x) for k, x in meta.get("energies_wh", {}).items()})
