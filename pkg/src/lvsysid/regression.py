"""Total subsystem impedance from participation-factor bounds.

For every time step the positive-sequence voltage drop across a subsystem,
divided by the inflowing current, is a lower bound on the total impedance
and, divided by the outflowing current, an upper bound. Regressing the
lower bound on the participation factor ``f = i_out / i_in`` and
extrapolating to ``f = 1`` (no interior consumption) estimates the total.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, column_or_1d

from .exceptions import DegenerateRegression, InsufficientExcitation
from .grid import decompose_subsystems, open_ended, subsystem_true_impedance
from .sequence import positive_sequence, pseudo_positive_magnitude

UNIFORM = "uniform"
POWER = "power"


def positive_magnitude(x, phasor):
    """|x1| per step: exact for phasors, pseudo (mean magnitude) otherwise."""
    if phasor:
        return np.abs(positive_sequence(np.asarray(x, dtype=complex)))
    return pseudo_positive_magnitude(np.abs(x))


@dataclass
class BoundarySeries:
    """Positive-sequence magnitudes at the two ends of a subsystem."""

    v_k: np.ndarray
    v_l: np.ndarray
    i_in: np.ndarray
    i_out: np.ndarray
    swapped: bool = False
    violations: int = 0  # steps with v_l > v_k after orientation


def boundary_series(sub, meas):
    """Magnitudes of the voltages at ``k``/``l``, the current entering at ``k``
    and the current arriving at ``l`` through the subsystem."""
    ph = meas.is_phasor
    nk, nl = meas.nodes[sub.k], meas.nodes[sub.l]
    i_in = nk.branch_current(sub.path[1])
    i_out = nl.branch_current(sub.path[-2])  # leaves l back into the subsystem
    return BoundarySeries(
        v_k=positive_magnitude(nk.v, ph),
        v_l=positive_magnitude(nl.v, ph),
        i_in=positive_magnitude(i_in, ph),
        i_out=positive_magnitude(i_out, ph),
    )


def orient_boundary(b):
    """Swap the ends so that the mean voltage at ``k`` is not below that at ``l``."""
    if b.v_k.mean() < b.v_l.mean():
        b = BoundarySeries(b.v_l, b.v_k, b.i_out, b.i_in, swapped=not b.swapped)
    b.violations = int(np.sum(b.v_l > b.v_k))
    return b


@dataclass
class RegressionSamples:
    t: np.ndarray
    f: np.ndarray
    z_lb: np.ndarray
    z_ub: np.ndarray
    dropped: int = 0

    def __len__(self):
        return self.t.size


def build_samples(b, current_floor=0.5):
    """Per-step participation factor and impedance bounds.

    Steps whose inflow is below ``current_floor`` (A) are dropped. A zero
    outflow gives an infinite upper bound.
    """
    dv = b.v_k - b.v_l
    keep = b.i_in >= current_floor
    if not keep.any():
        raise InsufficientExcitation(
            f"no step with inflow current above {current_floor} A"
        )
    t = np.nonzero(keep)[0]
    i_in, i_out, dv = b.i_in[keep], b.i_out[keep], dv[keep]
    f = i_out / i_in
    z_lb = dv / i_in
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z_ub = np.where(i_out > 0, dv / np.where(i_out > 0, i_out, 1.0), np.inf)
    return RegressionSamples(t, f, z_lb, z_ub, int((~keep).sum()))


def wls_line(f, y, w):
    """Weighted least-squares line ``y ~ beta0 * f + beta1``; returns (beta0, beta1, rss)."""
    f, y, w = (np.asarray(a, dtype=float) for a in (f, y, w))
    sw = w.sum()
    if sw <= 0:
        raise DegenerateRegression("all regression weights are zero")
    fm = (w * f).sum() / sw
    ym = (w * y).sum() / sw
    sff = (w * (f - fm) ** 2).sum()
    if sff <= 1e-12 * max(1.0, (w * f**2).sum()):
        raise DegenerateRegression("participation factor does not vary; slope is undetermined")
    beta0 = (w * (f - fm) * (y - ym)).sum() / sff
    beta1 = ym - beta0 * fm
    rss = float((w * (y - beta0 * f - beta1) ** 2).sum())
    return float(beta0), float(beta1), rss


class ParticipationRegressor(BaseEstimator, RegressorMixin):
    """Weighted linear fit of the lower impedance bound on the participation factor.

    Parameters
    ----------
    weighting : {"power", "uniform"}
        ``"power"`` weights each step by ``f ** weight_exponent`` so steps
        with little interior consumption dominate.
    weight_exponent : float
        Exponent ``p`` of the power weighting.

    Attributes
    ----------
    coef_ : float
        Slope ``beta0`` in ohm.
    intercept_ : float
        Intercept ``beta1`` in ohm.
    z_tot_ : float
        Fitted line evaluated at ``f = 1``.
    """

    def __init__(self, weighting=POWER, weight_exponent=2.0):
        self.weighting = weighting
        self.weight_exponent = weight_exponent

    def _weights(self, f):
        if self.weighting == UNIFORM:
            return np.ones_like(f)
        if self.weighting == POWER:
            return np.clip(f, 0.0, None) ** self.weight_exponent
        raise ValueError(f"unknown weighting {self.weighting!r}")

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(np.asarray(X, dtype=float).reshape(len(y), -1), y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("expected a single participation-factor column")
        f = X[:, 0]
        w = self._weights(f)
        if sample_weight is not None:
            w = w * column_or_1d(sample_weight)
        self.coef_, self.intercept_, self.rss_ = wls_line(f, y, w)
        self.z_tot_ = self.coef_ + self.intercept_
        self.n_samples_ = f.size
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self)
        f = np.asarray(X, dtype=float).reshape(-1)
        return self.coef_ * f + self.intercept_


@dataclass
class SubsystemFit:
    subsystem: str
    z_hat: float = float("nan")
    z_true: float = float("nan")
    beta0: float = float("nan")
    beta1: float = float("nan")
    n_samples: int = 0
    dropped: int = 0
    swapped: bool = False
    violations: int = 0
    z_lb_min: float = float("nan")
    z_ub_max: float = float("nan")
    status: str = "ok"
    reason: str = ""
    scheme: str = ""
    samples: RegressionSamples = field(default=None, repr=False)

    @property
    def estimated(self):
        return self.status == "ok"

    @property
    def rel_error(self):
        return (self.z_hat - self.z_true) / self.z_true


def fit_subsystem(sub, meas, weighting=POWER, weight_exponent=2.0, current_floor=0.5, catalog=None):
    """Run orientation, sample construction and the weighted fit for one subsystem."""
    b = orient_boundary(boundary_series(sub, meas))
    s = build_samples(b, current_floor)
    reg = ParticipationRegressor(weighting, weight_exponent).fit(s.f[:, None], s.z_lb)
    finite = np.isfinite(s.z_ub)
    scheme = UNIFORM if weighting == UNIFORM else f"f^{weight_exponent:g}"
    fit = SubsystemFit(
        subsystem=sub.id,
        z_hat=reg.z_tot_,
        beta0=reg.coef_,
        beta1=reg.intercept_,
        n_samples=len(s),
        dropped=s.dropped,
        swapped=b.swapped,
        violations=b.violations,
        z_lb_min=float(s.z_lb.min()),
        z_ub_max=float(s.z_ub[finite].max()) if finite.any() else float("inf"),
        scheme=scheme,
        samples=s,
    )
    if catalog is not None:
        fit.z_true = subsystem_true_impedance(sub, catalog)[2]
    return fit


def estimate_ztot_all(g, meas, switch_states=None, subsystems=None, weighting=POWER,
                      weight_exponent=2.0, current_floor=0.5):
    """Fit every subsystem; ones that cannot be estimated carry a status and reason.

    A subsystem is skipped when it is de-energized or open-ended (nothing
    flows out of its far node, so the participation factor is always zero).
    Measurements must already be in system phase order.
    """
    if subsystems is None:
        subsystems = decompose_subsystems(g, switch_states)
    fits = {}
    for sub in subsystems:
        z_true = subsystem_true_impedance(sub, g.catalog)[2]
        if sub.deenergized:
            fits[sub.id] = SubsystemFit(sub.id, z_true=z_true, status="skipped", reason="de-energized")
            continue
        if open_ended(g, sub, switch_states):
            fits[sub.id] = SubsystemFit(sub.id, z_true=z_true, status="skipped", reason="not estimable: open-ended")
            continue
        try:
            fits[sub.id] = fit_subsystem(sub, meas, weighting, weight_exponent, current_floor, g.catalog)
        except (InsufficientExcitation, DegenerateRegression) as exc:
            fits[sub.id] = SubsystemFit(sub.id, z_true=z_true, status="failed", reason=f"{type(exc).__name__}: {exc}")
    return fits
