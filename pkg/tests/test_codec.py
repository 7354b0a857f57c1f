import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scansim.channel import ChannelParams, LinkConfig, sample_channel
from scansim.codec import (CodecConfig, ImageSample, PSNR_CAP, band_errors, dct_coefficients, decode_image,
                           encode_image, mse_loss, n_symbols, psnr, psnr_to_mse, mse_to_psnr, send_image,
                           symbol_streams, teacher_features, to_blocks, from_blocks, transmit_image, waterfill,
                           zigzag_order, zonal_truncation)
from scansim.csi import encode_csi
from scansim.dataio import SyntheticSpec, synth_images
from scansim.errors import InvalidInputError
from scansim.numerics import RngStream


def _img(seed=0, cutoff=0.5):
    return synth_images(SyntheticSpec(complexity=cutoff), 1, RngStream(seed))[0]


IDENT = np.eye(16, dtype=complex)


def test_zigzag_matches_jpeg_table():
    assert list(zigzag_order(8, 8)[:10]) == [0, 1, 8, 16, 9, 2, 3, 10, 17, 24]
    assert sorted(zigzag_order(5, 3)) == list(range(15))


def test_symbol_count_and_power():
    s = _img()
    z = encode_image(s, IDENT, 0.01, CodecConfig())
    assert z.symbols.size == math.floor(3072 / 6) == 512
    assert abs(np.mean(np.abs(z.symbols) ** 2) - 1) < 1e-9
    assert z.bandwidth_ratio == pytest.approx(512 / 3072)


def test_constant_image_dc_only():
    s = ImageSample(np.full((32, 32, 3), 0.4))
    z = encode_image(s, IDENT, 0.01, CodecConfig(gain_mode=False))
    # the three planes' DC terms fill the first two symbols
    assert np.all(np.abs(z.symbols[2:]) < 1e-9)
    assert psnr(s, decode_image(z, IDENT, 0.01, CodecConfig(gain_mode=False))) >= 60


def test_identity_round_trip_is_truncation():
    for cfg in (CodecConfig(), CodecConfig(gain_mode=False), CodecConfig(rho=0.3, clamp=False)):
        s = _img(3, 0.8)
        z = encode_image(s, IDENT, 0.05, cfg)
        out = decode_image(z, IDENT, 0.05, cfg)
        np.testing.assert_allclose(out.pixels, zonal_truncation(s, cfg).pixels, atol=1e-12)


def test_full_rate_round_trip():
    s = _img(4, 0.3)
    cfg = CodecConfig(rho=1.0)
    out = decode_image(encode_image(s, IDENT, 0.1, cfg), IDENT, 0.1, cfg)
    assert psnr(s, out) >= 100


def test_rho_too_small():
    with pytest.raises(InvalidInputError):
        encode_image(ImageSample(np.zeros((2, 2, 1))), IDENT, 0.1, CodecConfig(rho=0.1))
    with pytest.raises(InvalidInputError):
        CodecConfig(rho=0)


def test_odd_retained_count():
    # 2K > N: every coefficient is kept and the last symbol is half empty
    s = ImageSample(np.random.default_rng(0).random((3, 3, 1)))
    cfg = CodecConfig(rho=0.9, clamp=False)
    out = decode_image(encode_image(s, IDENT[:3, :3], 0.1, cfg, n_streams=1), IDENT[:3, :3], 0.1, cfg,
                       shape=(3, 3, 1), n_streams=1)
    np.testing.assert_allclose(out.pixels, s.pixels, atol=1e-12)


def test_stream_layout():
    np.testing.assert_array_equal(symbol_streams(5, 2), [0, 0, 0, 1, 1])
    z = np.arange(5) + 0j
    b = to_blocks(z, 2)
    assert b.shape == (2, 3) and b[1, 2] == 0
    np.testing.assert_array_equal(from_blocks(b, 5), z)


@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-4, 100.0)), min_size=1, max_size=6), st.floats(1e-3, 10.0), st.floats(0.1, 10.0))
def test_waterfill_properties(g2, noise, total):
    p = waterfill(g2, noise, total)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(total, rel=1e-9)
    g = np.asarray(g2)
    order = np.argsort(-g, kind="stable")
    alive = g[order] > 0
    if alive.all():
        assert np.all(np.diff(p[order]) <= 1e-9)
        # equal water level on active modes
        act = p > 1e-12
        lvl = p[act] + noise / g[act]
        assert np.ptp(lvl) < 1e-9 * max(1.0, lvl.max())


def test_waterfill_equal_gains():
    np.testing.assert_allclose(waterfill([2.0, 2.0], 0.5, 2.0), [1.0, 1.0])
    np.testing.assert_allclose(waterfill([100.0, 1e-6], 1.0, 2.0), [2.0, 0.0])


def test_perfect_csi_noiseless_link_matches_truncation():
    cfg = CodecConfig()
    for seed in range(5):
        s = _img(seed, 0.6)
        ch = sample_channel(ChannelParams(), RngStream(seed, 9))
        cw = encode_csi(ch.H, 512, 0)
        s_hat, p = transmit_image(s, ch, cw, LinkConfig(1.0, 1e-12), cfg, RngStream(seed, 10))
        assert abs(p - psnr(s, zonal_truncation(s, cfg))) < 0.1


def test_link_improves_with_snr_and_length():
    imgs = synth_images(SyntheticSpec(complexity=0.2), 12, RngStream(1))
    cfg = CodecConfig()

    def mean_psnr(snr, B):
        vals = []
        for i, s in enumerate(imgs):
            H = sample_channel(ChannelParams(), RngStream(2, 0, (i,))).H
            from scansim.csi import decode_csi
            out = send_image(s, H, decode_csi(encode_csi(H, B, i)), LinkConfig.from_snr_db(snr), cfg,
                             RngStream(3, 0, (i,)))
            vals.append(out.psnr_db)
        return np.mean(vals)

    assert mean_psnr(-6, 192) < mean_psnr(18, 192)
    assert mean_psnr(12, 32) < mean_psnr(12, 192)


def test_psnr_examples():
    a = ImageSample(np.zeros((2, 2, 1)))
    b = ImageSample(np.ones((2, 2, 1)))
    assert psnr(a, b) == pytest.approx(0.0)
    same = psnr(a, a)
    assert same == PSNR_CAP and same.exact
    assert not psnr(a, b).exact
    assert 10 * math.log10(255**2 / 1.0) == pytest.approx(48.1308, abs=1e-4)
    x = np.zeros((1, 1, 1))
    assert psnr(x, x + 1.0, max_val=255) == pytest.approx(48.1308, abs=1e-4)
    with pytest.raises(InvalidInputError):
        psnr(a, a, max_val=0)
    with pytest.raises(InvalidInputError):
        psnr(a, ImageSample(np.zeros((3, 2, 1))))


def test_psnr_identity_with_mse(rng):
    a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    assert psnr(a, b) == pytest.approx(-10 * math.log10(mse_loss(a, b)), abs=1e-12)
    assert psnr_to_mse(mse_to_psnr(0.0123)) == pytest.approx(0.0123)


def test_mse_loss_oracle(rng):
    a, b = rng.random((5, 6, 3)), rng.random((5, 6, 3))
    naive = 0.0
    for i in range(5):
        for j in range(6):
            for c in range(3):
                naive += (a[i, j, c] - b[i, j, c]) ** 2
    assert abs(mse_loss(a, b) - naive / a.size) < 1e-12
    assert mse_loss(a, a) == 0
    assert mse_loss(a, a + 0.1) == pytest.approx(0.01)


def test_teacher_features():
    const = ImageSample(np.full((32, 32, 3), 0.7))
    f = teacher_features(encode_image(const, IDENT, 0.1, CodecConfig(gain_mode=False)))
    assert f[0] > 0 and np.all(np.abs(f[1:]) < 1e-12)
    rnd = teacher_features(encode_image(_img(2), IDENT, 0.1, CodecConfig()))
    assert np.all(np.isfinite(rnd)) and np.all(rnd >= 0) and rnd.size == 16


def test_band_errors_sum_to_total_error():
    s, t = _img(1), _img(2)
    assert band_errors(s, t).sum() == pytest.approx(np.sum((s.pixels - t.pixels) ** 2))


def test_dct_orthonormal():
    s = _img(5)
    assert np.sum(dct_coefficients(s) ** 2) == pytest.approx(np.sum(s.pixels**2))


def test_image_validation():
    with pytest.raises(InvalidInputError):
        ImageSample(np.zeros((0, 3, 3)))
    with pytest.raises(InvalidInputError):
        ImageSample.checked(np.full((2, 2, 1), 1.5))
    assert ImageSample(np.zeros((4, 5))).channels == 1


def test_n_symbols():
    assert n_symbols(3072, 1 / 6) == 512
    assert n_symbols(10, 0.25) == 2
