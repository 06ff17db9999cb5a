import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvsysid.exceptions import AsymmetricImpedance, PhasorRequired
from lvsysid.sequence import (
    A,
    T,
    T_INV,
    from_sequence,
    impedance_to_sequence,
    positive_sequence,
    pseudo_positive_magnitude,
    sequence_to_impedance,
    to_sequence,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
complex_triples = st.lists(st.builds(complex, finite, finite), min_size=3, max_size=3).map(np.array)


def test_inverse_pair_is_identity():
    assert np.abs(T_INV @ T - np.eye(3)).max() < 1e-14
    assert np.abs(T @ T_INV - np.eye(3)).max() < 1e-14


def test_balanced_set_is_pure_positive_sequence():
    bal = np.array([1.0, A**2, A])  # 1 at 0, -120, +120 degrees
    s = to_sequence(bal)
    assert np.allclose(s, [0, 1, 0], atol=1e-12)


def test_common_mode_is_pure_zero_sequence():
    assert np.allclose(to_sequence(np.ones(3, dtype=complex)), [1, 0, 0], atol=1e-15)


def test_from_sequence_fixtures():
    assert np.allclose(from_sequence([0, 1, 0]), [1, A**2, A])
    assert np.allclose(from_sequence([1, 0, 0]), [1, 1, 1])


def test_magnitude_only_input_rejected():
    with pytest.raises(PhasorRequired):
        to_sequence(np.array([1.0, 1.0, 1.0]))
    with pytest.raises(PhasorRequired):
        to_sequence(np.ones(3, dtype=complex), phasor=False)


def test_time_series_shape():
    x = np.random.default_rng(0).standard_normal((50, 3)) * (1 + 0j)
    assert to_sequence(x).shape == (50, 3)
    assert positive_sequence(x).shape == (50,)


@given(complex_triples)
def test_round_trip(p):
    back = from_sequence(to_sequence(p.astype(complex)))
    assert np.abs(back - p).max() <= 1e-12 * max(1.0, np.abs(p).max())


@given(complex_triples, complex_triples, finite)
def test_linearity(p, q, alpha):
    p, q = p.astype(complex), q.astype(complex)
    lhs = to_sequence(alpha * p + q)
    rhs = alpha * to_sequence(p) + to_sequence(q)
    assert np.abs(lhs - rhs).max() <= 1e-9 * (1 + np.abs(lhs).max())


@given(st.floats(0.01, 10), st.floats(0.0, 5), st.floats(-180, 180), st.floats(0.1, 1e3))
def test_rotated_balanced_sets_have_no_zero_or_negative_part(mag, _unused, deg, scale):
    bal = mag * scale * np.exp(1j * np.radians(deg)) * np.array([1, A**2, A])
    s = to_sequence(bal)
    assert abs(s[0]) < 1e-12 * abs(s[1]) and abs(s[2]) < 1e-12 * abs(s[1])


def test_impedance_fixtures():
    assert np.allclose(impedance_to_sequence(np.eye(3)), (1, 1, 1))
    z = np.full((3, 3), 0.5) + 0.5 * np.eye(3)  # z_s = 1, z_m = 0.5
    assert np.allclose(impedance_to_sequence(z), (2, 0.5, 0.5))


@settings(max_examples=50)
@given(st.builds(complex, finite, finite), st.builds(complex, finite, finite))
def test_random_circulant_impedance_diagonalises(zs, zm):
    z = np.full((3, 3), zm) + np.eye(3) * (zs - zm)
    z0, z1, z2 = impedance_to_sequence(z)
    scale = max(1.0, abs(zs), abs(zm))
    assert abs(z0 - (zs + 2 * zm)) < 1e-10 * scale
    assert abs(z1 - (zs - zm)) < 1e-10 * scale and abs(z2 - z1) < 1e-10 * scale
    back = sequence_to_impedance(z0, z1)
    assert np.abs(back - z).max() < 1e-10 * scale


def test_asymmetric_impedance_rejected():
    z = np.eye(3, dtype=complex)
    z[0, 1] = 0.3
    with pytest.raises(AsymmetricImpedance):
        impedance_to_sequence(z)
    with pytest.raises(AsymmetricImpedance):
        impedance_to_sequence(np.diag([1.0, 2.0, 3.0]))


def test_pseudo_positive_magnitude_fixtures():
    assert pseudo_positive_magnitude([1, 1, 1]) == pytest.approx(1.0)
    assert pseudo_positive_magnitude([1, 0, 0]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        pseudo_positive_magnitude([1, -1, 0])


@given(st.lists(st.floats(0, 1e4), min_size=3, max_size=3))
def test_pseudo_positive_equals_mean_magnitude(m):
    assert pseudo_positive_magnitude(m) == pytest.approx(np.mean(m), rel=1e-12, abs=1e-9)


def test_pseudo_positive_close_to_true_on_simulated_voltages(tree_sim):
    # mild unbalance: the angle-flattening error stays far below the drop scale
    v = tree_sim.node_voltage("23")
    exact = np.abs(positive_sequence(v))
    pseudo = pseudo_positive_magnitude(np.abs(v))
    assert np.abs(pseudo - exact).max() < 0.5  # V, vs ~230 V
