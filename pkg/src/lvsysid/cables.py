"""Cable-type identification from a total impedance and segment lengths."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .kernels import count_monotone, enumerate_monotone


@dataclass
class CableAssignment:
    types: tuple  # catalog index per segment, non-decreasing
    z: float  # reconstructed total, ohm
    residual: float  # (z_hat - z)^2
    tie: bool = False
    n_candidates: int = 0

    def labels(self, catalog):
        return [catalog[i].id for i in self.types]


def candidate_matrix(n_s, m):
    """All non-decreasing type vectors as an ``(n_candidates, n_s)`` index array."""
    return np.array(list(enumerate_monotone(n_s, m)), dtype=int).reshape(-1, n_s)


def identify_cables(z_hat, lengths, z_per_len, tie_tol=1e-15):
    """Pick the non-decreasing type vector whose total impedance is closest to ``z_hat``.

    Parameters
    ----------
    z_hat : float
        Estimated total impedance magnitude in ohm.
    lengths : array_like
        Segment lengths in m, ordered from the slack-side boundary.
    z_per_len : array_like
        Impedance magnitude per km of every catalog type, sorted ascending.
    """
    lengths = np.asarray(lengths, dtype=float)
    zp = np.asarray(z_per_len, dtype=float)
    if zp.size == 0:
        raise ValueError("cable catalog is empty")
    if lengths.ndim != 1 or lengths.size == 0 or np.any(lengths <= 0):
        raise ValueError("lengths must be a non-empty vector of positive values")
    if z_hat < 0:
        raise ValueError("z_hat must be non-negative")
    cand = candidate_matrix(lengths.size, zp.size)
    z = (zp[cand] * lengths / 1000.0).sum(axis=1)
    res = (z_hat - z) ** 2
    best = int(np.argmin(res))  # first minimum = lexicographically smallest
    tie = int(np.sum(res - res[best] <= tie_tol * max(1.0, res[best]))) > 1
    return CableAssignment(tuple(int(i) for i in cand[best]), float(z[best]), float(res[best]), tie, len(cand))


class CableTypeIdentifier(BaseEstimator):
    """Monotone categorical fit of per-segment cable types to a total impedance.

    Parameters
    ----------
    catalog : CableCatalog
        Candidate types; their positive-sequence impedance per length is used.
    """

    def __init__(self, catalog):
        self.catalog = catalog

    def fit(self, lengths):
        self.lengths_ = np.asarray(lengths, dtype=float)
        self.n_candidates_ = count_monotone(self.lengths_.size, len(self.catalog))
        return self

    def predict(self, z_hat):
        return identify_cables(z_hat, self.lengths_, self.catalog.z_per_len)


def misclassified(assignment, truth):
    return [k for k, (a, b) in enumerate(zip(assignment.types, truth)) if a != b]


def cable_montecarlo(z_true, lengths, z_per_len, truth, sigmas, trials=50, seed=0, sigma_length=None):
    """Per-segment misclassification frequency under Gaussian input noise.

    For each level ``sigma`` the total impedance gets noise with standard
    deviation ``sigma`` ohm and every length gets ``sigma`` km (the same
    number in both units) unless ``sigma_length`` (km, one per level) is
    given. Returns an array ``(len(sigmas), n_s)`` of error rates.
    """
    lengths = np.asarray(lengths, dtype=float)
    truth = np.asarray(truth)
    sig_len = sigmas if sigma_length is None else sigma_length
    out = np.zeros((len(sigmas), lengths.size))
    for a, (sz, sl) in enumerate(zip(sigmas, sig_len)):
        rng = np.random.default_rng([seed, a])
        for _ in range(trials):
            dz = rng.standard_normal() * sz
            dl = rng.standard_normal(lengths.size) * sl * 1000.0
            noisy_len = np.maximum(lengths + dl, 1e-3)
            res = identify_cables(max(z_true + dz, 0.0), noisy_len, z_per_len)
            out[a] += np.asarray(res.types) != truth
    return out / trials
