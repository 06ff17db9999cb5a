"""Symmetrical-component (Fortescue) transforms for three-phase quantities.

Arrays carry phases on the last axis, so a ``(T, 3)`` series transforms
in one call.
"""

import numpy as np

from .exceptions import AsymmetricImpedance, PhasorRequired

A = np.exp(2j * np.pi / 3)

#: phase -> sequence, rows (zero, positive, negative)
T_INV = np.array([[1, 1, 1], [1, A, A**2], [1, A**2, A]], dtype=complex) / 3.0
#: sequence -> phase
T = np.array([[1, 1, 1], [1, A**2, A], [1, A, A**2]], dtype=complex)

NOMINAL_ANGLES = np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3])


def _as_triples(p):
    arr = np.asarray(p)
    if arr.shape[-1] != 3:
        raise ValueError(f"last axis must have length 3, got shape {arr.shape}")
    return arr


def to_sequence(p, phasor=True):
    """Return (zero, positive, negative) components of phase triples.

    ``phasor=False`` marks magnitude-only data, which has no sequence
    decomposition; use :func:`pseudo_positive_magnitude` for that case.
    """
    if not phasor or not np.iscomplexobj(p):
        raise PhasorRequired("symmetrical components need phasor (complex) input")
    arr = _as_triples(p)
    return arr @ T_INV.T


def from_sequence(s):
    """Inverse of :func:`to_sequence`."""
    arr = _as_triples(np.asarray(s, dtype=complex))
    return arr @ T.T


def positive_sequence(p):
    return to_sequence(p)[..., 1]


def impedance_to_sequence(z_abc, rtol=1e-10):
    """Diagonalise a circulant-symmetric 3x3 impedance matrix.

    Returns ``(z0, z1, z2)``. Raises :class:`AsymmetricImpedance` unless the
    matrix has equal diagonal entries and equal off-diagonal entries.
    """
    z = np.asarray(z_abc, dtype=complex)
    if z.shape != (3, 3):
        raise ValueError("impedance matrix must be 3x3")
    scale = max(np.abs(z).max(), np.finfo(float).tiny)
    diag = np.diag(z)
    off = z[~np.eye(3, dtype=bool)]
    if np.abs(diag - diag[0]).max() > rtol * scale or np.abs(off - off[0]).max() > rtol * scale:
        raise AsymmetricImpedance("impedance matrix is not circulant-symmetric")
    z012 = T_INV @ z @ T
    residue = np.abs(z012[~np.eye(3, dtype=bool)]).max()
    if residue > rtol * scale:
        raise AsymmetricImpedance(f"sequence matrix not diagonal (residue {residue:.2e})")
    return z012[0, 0], z012[1, 1], z012[2, 2]


def sequence_to_impedance(z0, z1):
    """Phase-domain matrix with self term (z0 + 2 z1)/3 and mutual (z0 - z1)/3."""
    zs = (z0 + 2 * z1) / 3.0
    zm = (z0 - z1) / 3.0
    return np.full((3, 3), zm, dtype=complex) + np.eye(3) * (zs - zm)


def pseudo_positive_magnitude(m):
    """Positive-sequence magnitude of magnitude-only triples.

    The measured magnitudes are given the nominal angles 0, -120 and +120
    degrees before the transform; with these angles the result reduces to
    the mean of the three magnitudes.
    """
    mags = _as_triples(np.asarray(m, dtype=float))
    if np.any(mags < 0):
        raise ValueError("magnitudes must be non-negative")
    pseudo = mags * np.exp(1j * NOMINAL_ANGLES)
    return np.abs(pseudo @ T_INV[1])
