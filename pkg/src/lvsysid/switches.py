"""Switch-state detection from current magnitudes at grid junctions."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import IncompleteMeasurement
from .grid import CLOSED, OPEN


def default_epsilon(noise=None):
    """Per-step threshold: five noise-floor standard deviations, at least 0.1 A."""
    floor = noise.current_noise_floor() if noise is not None else 0.0
    return max(5.0 * floor, 0.1)


def _check_series(x, name):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != 3:
        raise IncompleteMeasurement(f"{name} must hold three phase series, got shape {x.shape}")
    if not np.all(np.isfinite(np.abs(x))):
        raise IncompleteMeasurement(f"{name} contains missing samples")
    return np.abs(x)


def detect_switch_state(i_in, i_out, epsilon, window=None):
    """Decide whether a junction carries current.

    Closed iff ``sum_t sum_phase max(|i_in|, |i_out|) >= epsilon * window``
    over the first ``window`` steps (all steps by default).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = _check_series(i_in, "i_in")
    b = _check_series(i_out, "i_out")
    if a.shape != b.shape:
        raise IncompleteMeasurement("inflow and outflow series differ in length")
    T = a.shape[0] if window is None else int(window)
    if T < 1:
        raise ValueError("window must be at least one step")
    if a.shape[0] < T:
        raise IncompleteMeasurement(f"need {T} steps, got {a.shape[0]}")
    total = np.maximum(a[:T], b[:T]).sum()
    return CLOSED if total >= epsilon * T else OPEN


def junction_currents(g, meas, switch):
    """The (inflow, outflow) current pair observed around one switch."""
    a, b = switch.nodes
    if switch.is_tie:
        if a not in meas.nodes or b not in meas.nodes:
            raise IncompleteMeasurement(f"tie {switch.id} needs measurements at both ends")
        return meas.nodes[a].branch_current(b), meas.nodes[b].branch_current(a)
    node = a if a in meas.nodes else b
    other = b if node == a else a
    ns = meas.nodes.get(node)
    if ns is None:
        raise IncompleteMeasurement(f"switch {switch.id} has no measured terminal")
    if other == ns.upstream:
        # switch sits on the incoming cable: compare it with the node's outflows
        outs = list(ns.i_out.values())
        out = np.sum([np.abs(x) for x in outs], axis=0) if outs else np.zeros_like(np.abs(ns.i_in))
        return ns.i_in, out
    if other not in ns.i_out:
        raise IncompleteMeasurement(f"no outflow towards {other} at node {node}")
    return ns.i_in, ns.i_out[other]


@dataclass
class SwitchDecision:
    switch: str
    state: str
    statistic: float  # time-averaged summed current, A
    threshold: float


class SwitchStateDetector(BaseEstimator):
    """Estimate all switch states of a grid from one measurement window.

    Parameters
    ----------
    epsilon : float, optional
        Per-step threshold in A. Defaults to :func:`default_epsilon` of
        ``noise`` (or 0.1 A without a noise model).
    window : int, optional
        Number of steps summed; the full horizon by default.
    noise : NoiseModel, optional
        Used only to derive the default threshold.
    """

    def __init__(self, epsilon=None, window=None, noise=None):
        self.epsilon = epsilon
        self.window = window
        self.noise = noise

    def _epsilon(self):
        return self.epsilon if self.epsilon is not None else default_epsilon(self.noise)

    def fit(self, g, meas):
        eps = self._epsilon()
        self.decisions_ = {}
        for sw in g.switches:
            i_in, i_out = junction_currents(g, meas, sw)
            T = meas.T if self.window is None else min(int(self.window), meas.T)
            if self.window is not None and int(self.window) > meas.T:
                raise IncompleteMeasurement(f"need {self.window} steps, got {meas.T}")
            state = detect_switch_state(i_in, i_out, eps, T)
            stat = float(np.maximum(np.abs(i_in[:T]), np.abs(i_out[:T])).sum() / T)
            self.decisions_[sw.id] = SwitchDecision(sw.id, state, stat, eps)
        self.states_ = {k: d.state for k, d in self.decisions_.items()}
        self.epsilon_ = eps
        return self

    def predict(self, g, meas):
        return self.fit(g, meas).states_


def identify_topology(g, meas, epsilon=None, window=None, noise=None):
    """Map every switch id to ``"open"`` or ``"closed"``."""
    return SwitchStateDetector(epsilon, window, noise).predict(g, meas)


def count_switch_errors(estimated, truth):
    return sum(1 for k, v in truth.items() if estimated.get(k) != v)
