import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtl import encoding, qsim
from qtl.encoding import EncodingSpec
from qtl.vqc import measure


def test_squash_examples():
    assert np.array_equal(encoding.squash(np.zeros(3)), np.zeros(3))
    assert encoding.squash([50.0])[0] == pytest.approx(math.pi / 2)
    expected = math.pi / 2 * math.tanh(1.0)
    assert np.allclose(encoding.squash([1.0, -1.0]), [1.19631, -1.19631], atol=5e-6)
    assert np.allclose(encoding.squash([1.0, -1.0]), [expected, -expected], rtol=1e-14)


def test_squash_range():
    out = encoding.squash(np.linspace(-30, 30, 101), 2.0)
    assert np.all(np.abs(out) <= 2.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        EncodingSpec(0)
    with pytest.raises(ValueError):
        EncodingSpec(2, angle_scale=0)


def test_angles_from_literal_pi_scaling():
    spec = EncodingSpec(2, angle_scale=math.pi, use_tanh=False)
    angles, deriv = encoding.angles_from([0.25, -0.5], spec)
    assert np.allclose(angles, [math.pi / 4, -math.pi / 2])
    assert np.allclose(deriv, math.pi)


def test_zero_angles_give_plus_states():
    z = measure(encoding.encode(np.zeros(6), 6))
    assert np.abs(z).max() < 1e-15


def test_half_pi_gives_one_and_minus_half_pi_gives_zero():
    up = encoding.encode([math.pi / 2], 1)
    assert np.allclose(up.amplitudes, [0, 1], atol=1e-15)
    assert qsim.expectation_z(up, 0) == pytest.approx(-1.0)
    down = encoding.encode([-math.pi / 2], 1)
    assert np.allclose(down.amplitudes, [1, 0], atol=1e-15)
    assert qsim.expectation_z(down, 0) == pytest.approx(1.0)


def test_encode_length_mismatch():
    with pytest.raises(ValueError):
        encoding.encode([0.1, 0.2], 3)


def test_batch_matches_circuit():
    angles = np.array([[0.1, -0.4, 1.2], [0.0, 0.7, -1.5]])
    batch = encoding.encode_batch(angles)
    for row, a in zip(batch, angles):
        assert np.abs(row - encoding.encode(a, 3).amplitudes).max() < 1e-15


angle_vectors = st.lists(st.floats(-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3), min_size=1,
                         max_size=6)


@settings(max_examples=60, deadline=None)
@given(angles=angle_vectors)
def test_readout_is_minus_sine(angles):
    z = measure(encoding.encode(angles, len(angles)))
    assert np.abs(z + np.sin(angles)).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(angles=angle_vectors, seed=st.integers(0, 1000))
def test_permuting_angles_permutes_readout(angles, seed):
    perm = np.random.default_rng(seed).permutation(len(angles))
    z = measure(encoding.encode(angles, len(angles)))
    zp = measure(encoding.encode(np.asarray(angles)[perm], len(angles)))
    assert np.allclose(zp, z[perm], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(a=angle_vectors, b=angle_vectors)
def test_injective_on_open_box(a, b):
    if len(a) != len(b) or np.allclose(a, b, atol=1e-9, rtol=0):
        return
    za = measure(encoding.encode(a, len(a)))
    zb = measure(encoding.encode(b, len(b)))
    assert not np.allclose(za, zb, atol=1e-15, rtol=0)
