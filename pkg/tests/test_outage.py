import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scansim.channel import ChannelParams
from scansim.codec import psnr_to_mse
from scansim.dataio import SyntheticSpec, synth_images
from scansim.errors import InvalidInputError
from scansim.numerics import RngStream
from scansim.outage import (LinkRunner, OutageConfig, estimate_sdop, is_outage, make_tape, paired_difference,
                            run_sdop, sdop_from_distortions, wilson_interval)
from scansim.policies import FixedPolicy


def test_is_outage_strict():
    assert not is_outage(0.01, 0.01)
    assert is_outage(0.01 + 1e-15, 0.01)
    assert not is_outage(0.0, 0.01)


def test_config():
    c = OutageConfig.from_gamma_th(26)
    assert c.D_th == pytest.approx(10 ** -2.6)
    assert c.gamma_th == pytest.approx(26)
    for bad in (dict(D_th=0), dict(D_th=float("inf")), dict(D_th=1, trials=0), dict(D_th=1, confidence=1)):
        with pytest.raises(InvalidInputError):
            OutageConfig(**bad)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 10)
    assert lo == 0 and 0.2 < hi < 0.35
    assert wilson_interval(10, 10)[1] == 1
    # textbook value for 81/263 at 95%
    lo, hi = wilson_interval(81, 263)
    assert lo == pytest.approx(0.2553, abs=1e-3) and hi == pytest.approx(0.3662, abs=1e-3)
    with pytest.raises(InvalidInputError):
        wilson_interval(3, 2)


@given(st.integers(1, 500), st.data())
def test_wilson_brackets_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def _stub(value):
    return lambda trial, B, sigma2: value


def test_stubbed_constant_pipelines():
    imgs = [None, None]
    cfg = OutageConfig(0.01, trials=200)
    assert estimate_sdop(imgs, ChannelParams(), 0.1, FixedPolicy(32), cfg, RngStream(0),
                         distortion_fn=_stub(0.001)).p_hat == 0
    assert estimate_sdop(imgs, ChannelParams(), 0.1, FixedPolicy(32), cfg, RngStream(0),
                         distortion_fn=_stub(0.5)).p_hat == 1


def test_stubbed_bernoulli_recovered():
    def fn(trial, B, sigma2):
        return 1.0 if trial.noise_stream.generator().random() < 0.3 else 0.0

    est = estimate_sdop([None], ChannelParams(), 0.1, FixedPolicy(32), OutageConfig(0.5, 10_000, 0.99),
                        RngStream(4), distortion_fn=fn)
    assert est.ci_low <= 0.3 <= est.ci_high
    assert est.ci_low <= est.p_hat <= est.ci_high


def test_tape_is_deterministic_and_paired():
    a, b = make_tape(5, 20, RngStream(3)), make_tape(5, 20, RngStream(3))
    assert [(t.image_index, t.csi_seed) for t in a] == [(t.image_index, t.csi_seed) for t in b]
    assert len({t.csi_seed for t in a}) == 20
    longer = make_tape(5, 40, RngStream(3))
    assert [t.csi_seed for t in longer[:20]] == [t.csi_seed for t in a]


def test_monotone_in_threshold_on_real_link():
    imgs = synth_images(SyntheticSpec(complexity=0.3), 6, RngStream(0))
    runner = LinkRunner(imgs)
    tape = make_tape(len(imgs), 40, RngStream(1))
    d = run_sdop(tape, 0.05, FixedPolicy(64), OutageConfig(1.0), runner).distortions
    p = [sdop_from_distortions(d, psnr_to_mse(g)).p_hat for g in (26, 28, 30)]
    assert p[0] <= p[1] <= p[2]
    prev = 2.0
    for D_th in np.geomspace(1e-4, 1e-1, 12):
        p = sdop_from_distortions(d, D_th).p_hat
        assert p <= prev
        prev = p


def test_runner_reproducible():
    imgs = synth_images(SyntheticSpec(), 3, RngStream(5))
    tape = make_tape(3, 5, RngStream(6))
    a = [LinkRunner(imgs).distortion(t, 96, 0.1) for t in tape]
    r = LinkRunner(imgs)
    b = [r.distortion(t, 96, 0.1) for t in tape]
    assert a == b == [r.distortion(t, 96, 0.1) for t in tape]


def test_run_sdop_validation():
    with pytest.raises(InvalidInputError):
        run_sdop([], 0.1, FixedPolicy(32), OutageConfig(1.0), distortion_fn=_stub(0))
    tape = make_tape(1, 3, RngStream(0))
    with pytest.raises(InvalidInputError):
        run_sdop(tape, 0.1, FixedPolicy(32), OutageConfig(1.0))


def test_paired_difference():
    a = np.array([1, 0, 0, 1, 0, 0])
    mean, se, margin = paired_difference(a, a)
    assert mean == 0 and se == 0 and margin == 0
    b = np.array([1, 1, 0, 1, 0, 1])
    mean, se, margin = paired_difference(a, b)
    assert mean == pytest.approx(-2 / 6)
    assert se == pytest.approx(np.std(a - b, ddof=1) / math.sqrt(6))
    assert margin == pytest.approx(1.6448536 * se, rel=1e-6)
