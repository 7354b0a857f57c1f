import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scansim.channel import (ChannelParams, LinkConfig, combine, power_normalize, power_scale, sample_channel,
                             snr_db, svd_precoder, transmit, ula_steering)
from scansim.errors import DegenerateChannelWarning, InvalidInputError, PowerConstraintError
from scansim.numerics import RngStream

from conftest import random_complex


def test_shape_and_determinism():
    p = ChannelParams()
    a = sample_channel(p, RngStream(3, 0, (1,)))
    b = sample_channel(p, RngStream(3, 0, (1,)))
    assert a.H.shape == (16, 16)
    assert np.array_equal(a.H, b.H)
    assert sample_channel(ChannelParams(n_tx=8, n_rx=4), RngStream(0)).H.shape == (4, 8)


def test_channel_normalisation():
    p = ChannelParams()
    g = np.random.default_rng(99)
    energy = np.mean([np.sum(np.abs(sample_channel(p, g).H) ** 2) for _ in range(10**4)])
    assert 0.97 * 256 <= energy <= 1.03 * 256


def test_steering_unit_norm():
    a = ula_steering(16, [0.0, 0.3, -1.2])
    np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-14)
    np.testing.assert_allclose(a[:, 0], np.ones(16) / 4)


@pytest.mark.parametrize("bad", [dict(n_tx=0), dict(n_rx=0), dict(n_clusters=0), dict(n_rays=0),
                                 dict(angle_spread=-0.1)])
def test_params_validated(bad):
    with pytest.raises(InvalidInputError):
        ChannelParams(**bad)


def test_precoder_diagonal_case():
    H = np.diag([3.0, 2.0, 1.0, 0.0]).astype(complex)
    V, U, s = svd_precoder(H, 2)
    np.testing.assert_allclose(s, [3, 2])
    assert V.shape == (4, 2) and U.shape == (4, 2)


def test_precoder_full_rank_diagonalises(rng):
    H = random_complex(rng, 6, 5)
    V, U, s = svd_precoder(H, 5)
    assert np.linalg.norm(U.conj().T @ H @ V - np.diag(s)) < 1e-8


def test_precoder_rank_one_warns(rng):
    H = np.outer(random_complex(rng, 4, 1), random_complex(rng, 4, 1).conj())
    with pytest.warns(DegenerateChannelWarning):
        _, _, s = svd_precoder(H, 2)
    assert s[1] == 0 and s[0] > 0


def test_precoder_bad_d(rng):
    with pytest.raises(InvalidInputError):
        svd_precoder(random_complex(rng, 3, 3), 4)


def test_noiseless_loopback(rng):
    for _ in range(100):
        H = random_complex(rng, 16, 16)
        V, U, s = svd_precoder(H, 2)
        x = random_complex(rng, 2, 1)[:, 0]
        y = transmit(x, V, H, 0.0)
        np.testing.assert_array_equal(y, H @ (V @ x))
        assert np.linalg.norm(combine(y, U) - s * x) < 1e-8 * np.linalg.norm(s * x)


def test_noise_variance():
    H = np.eye(4, dtype=complex)
    V = np.eye(4, 2, dtype=complex)
    x = np.zeros((2, 25000))
    y = transmit(x, V, H, 0.3, RngStream(8))
    assert abs(np.var(y) / 0.3 - 1) < 0.01


def test_power_constraint_enforced():
    V = np.eye(4, 2, dtype=complex)
    with pytest.raises(PowerConstraintError):
        transmit(np.array([2.0, 0.0]), V, np.eye(4), 0.0, power=1.0)
    transmit(np.array([1.0, 0.0]) * (1 + 1e-7), V, np.eye(4), 0.0, power=1.0)


def test_noisy_needs_rng():
    with pytest.raises(InvalidInputError):
        transmit(np.ones(2), np.eye(2), np.eye(2), 0.1)


def test_combine_identity_and_projection(rng):
    y = random_complex(rng, 5, 1)[:, 0]
    np.testing.assert_array_equal(combine(y, np.eye(5, 2)), y[:2])
    U = np.linalg.qr(random_complex(rng, 5, 2))[0]
    a = random_complex(rng, 2, 1)[:, 0]
    np.testing.assert_allclose(combine(U @ a, U), a, atol=1e-12)
    with pytest.raises(InvalidInputError):
        combine(y, np.eye(4, 2))


def test_snr_db_values():
    assert snr_db(1, 1) == 0
    assert snr_db(1, 0.1) == pytest.approx(10)
    assert snr_db(4, 1) == pytest.approx(6.0206, abs=1e-4)
    with pytest.raises(InvalidInputError):
        snr_db(0, 1)
    assert LinkConfig.from_snr_db(12.0).snr_db == pytest.approx(12.0)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_snr_antisymmetric(P, s2):
    assert snr_db(P, s2) + snr_db(s2, P) == pytest.approx(0, abs=1e-9)


def test_power_normalize(rng):
    V = np.linalg.qr(random_complex(rng, 8, 2))[0]
    blocks = random_complex(rng, 2, 50)
    out = power_normalize(blocks, V, 2.0)
    assert abs(np.mean(np.sum(np.abs(V @ out) ** 2, axis=0)) - 2.0) < 1e-9
    np.testing.assert_allclose(power_normalize(2 * blocks, V, 2.0), out, atol=1e-12)
    assert power_scale(out, V, 2.0) == pytest.approx(1.0, abs=1e-12)
    zero = np.zeros((2, 3))
    np.testing.assert_array_equal(power_normalize(zero, V, 1.0), zero)


def test_link_config_validation():
    with pytest.raises(InvalidInputError):
        LinkConfig(power=0)
    with pytest.raises(InvalidInputError):
        LinkConfig(noise_variance=-1)
    with pytest.raises(InvalidInputError):
        LinkConfig(n_streams=0)
