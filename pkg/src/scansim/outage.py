"""Distortion outage probability and its Monte Carlo estimate.

An outage is a reconstruction whose MSE strictly exceeds the threshold.
Trials live on a tape of per-trial random streams so that different
length policies can be compared on identical channels and noise.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .channel import ChannelParams, LinkConfig, sample_channel, svd_precoder
from .codec import CodecConfig, _estimate_modes, psnr_to_mse, send_image
from .csi import CsiCodeword, decode_csi, encode_csi
from .errors import DegenerateChannelWarning, InvalidInputError
from .numerics import RngStream


@dataclass(frozen=True)
class OutageConfig:
    D_th: float
    trials: int = 1000
    confidence: float = 0.95

    def __post_init__(self):
        if not (self.D_th > 0 and math.isfinite(self.D_th)):
            raise InvalidInputError(f"distortion threshold must be positive and finite, got {self.D_th}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise InvalidInputError(f"trials must be a positive integer, got {self.trials}")
        if not 0 < self.confidence < 1:
            raise InvalidInputError(f"confidence must lie in (0, 1), got {self.confidence}")

    @classmethod
    def from_gamma_th(cls, gamma_th: float, trials: int = 1000, confidence: float = 0.95,
                      max_val: float = 1.0) -> "OutageConfig":
        return cls(float(psnr_to_mse(gamma_th, max_val)), trials, confidence)

    @property
    def gamma_th(self) -> float:
        return 10.0 * math.log10(1.0 / self.D_th)


@dataclass(frozen=True)
class OutageEstimate:
    p_hat: float
    trials: int
    ci_low: float
    ci_high: float
    outages: int = 0


def is_outage(d: float, D_th: float) -> bool:
    return bool(d > D_th)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Two-sided Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= k <= n:
        raise InvalidInputError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clip rounding; at k = 0 or n the interval touches the boundary exactly
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return min(lo, p), max(hi, p)


def sdop_from_distortions(distortions, D_th: float, confidence: float = 0.95) -> OutageEstimate:
    d = np.asarray(distortions, dtype=float)
    if d.size == 0:
        raise InvalidInputError("no trials")
    k = int(np.sum(d > D_th))
    lo, hi = wilson_interval(k, d.size, confidence)
    return OutageEstimate(k / d.size, int(d.size), lo, hi, k)


@dataclass(frozen=True)
class Trial:
    index: int
    image_index: int
    channel_stream: RngStream
    noise_stream: RngStream
    csi_seed: int


def make_tape(n_images: int, trials: int, rng: RngStream) -> list[Trial]:
    """Per-trial image choice and seeds, each derived from the master stream by trial index."""
    if n_images < 1:
        raise InvalidInputError("no images")
    tape = []
    for i in range(int(trials)):
        base = rng.child(i)
        g = base.child(0).generator()
        image_index = int(g.integers(n_images))
        seed = int(g.integers(0, 2**32))
        tape.append(Trial(i, image_index, base.child(1), base.child(2), seed))
    return tape


@dataclass(frozen=True)
class TrialContext:
    """What the transmitter knows before choosing a length."""

    trial: Trial
    image: object
    coarse: CsiCodeword
    sigma2: float


class LinkRunner:
    """Runs the full link for tape trials, caching noise-independent work.

    Channel draws, the receiver's combiner and the decoded estimate for
    each (trial, B) are reused across noise levels and policies.
    """

    def __init__(self, images, params: ChannelParams = ChannelParams(), cfg: CodecConfig = CodecConfig(),
                 power: float = 1.0, n_streams: int = 2, coarse_length: int = 16):
        if not images:
            raise InvalidInputError("no images")
        self.images = list(images)
        self.params = params
        self.cfg = cfg
        self.power = power
        self.n_streams = n_streams
        self.coarse_length = coarse_length
        self._channels = {}
        self._modes = {}

    def channel(self, trial: Trial):
        hit = self._channels.get(trial.index)
        if hit is None:
            H = sample_channel(self.params, trial.channel_stream).H
            hit = (H, svd_precoder(H, self.n_streams)[1])
            self._channels[trial.index] = hit
        return hit

    def estimate_modes(self, trial: Trial, B: int):
        key = (trial.index, int(B))
        hit = self._modes.get(key)
        if hit is None:
            H, _ = self.channel(trial)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateChannelWarning)
                hit = _estimate_modes(decode_csi(encode_csi(H, int(B), trial.csi_seed)), self.n_streams)
            self._modes[key] = hit
        return hit

    def context(self, trial: Trial, sigma2: float) -> TrialContext:
        H, _ = self.channel(trial)
        coarse = encode_csi(H, self.coarse_length, trial.csi_seed)
        return TrialContext(trial, self.images[trial.image_index], coarse, float(sigma2))

    def distortion(self, trial: Trial, B: int, sigma2: float) -> float:
        H, U = self.channel(trial)
        link = LinkConfig(self.power, float(sigma2), self.n_streams)
        out = send_image(self.images[trial.image_index], H, None, link, self.cfg, trial.noise_stream,
                         estimate_modes=self.estimate_modes(trial, B), true_combiner=U)
        return float(np.mean((out.s_hat.pixels - self.images[trial.image_index].pixels) ** 2))


@dataclass
class SdopRun:
    estimate: OutageEstimate
    distortions: np.ndarray
    lengths: np.ndarray
    outages: np.ndarray = field(default=None)

    @property
    def average_length(self) -> float:
        return float(np.mean(self.lengths))


def run_sdop(tape, sigma2: float, policy, cfg: OutageConfig, runner: LinkRunner | None = None,
             distortion_fn=None) -> SdopRun:
    """SDOP over an existing tape.

    ``policy.assign(contexts)`` returns one length per trial. A
    ``distortion_fn(trial, B, sigma2)`` replaces the link (for stubs).
    """
    if not tape:
        raise InvalidInputError("empty trial tape")
    if runner is None and distortion_fn is None:
        raise InvalidInputError("need a link runner or a distortion function")
    if runner is not None:
        contexts = [runner.context(t, sigma2) for t in tape]
    else:
        contexts = [TrialContext(t, None, None, float(sigma2)) for t in tape]
    lengths = np.asarray(policy.assign(contexts), dtype=int)
    if lengths.shape != (len(tape),):
        raise InvalidInputError("policy must return one length per trial")
    fn = distortion_fn if distortion_fn is not None else runner.distortion
    d = np.array([fn(t, int(B), sigma2) for t, B in zip(tape, lengths)])
    est = sdop_from_distortions(d, cfg.D_th, cfg.confidence)
    return SdopRun(est, d, lengths, d > cfg.D_th)


def estimate_sdop(images, params: ChannelParams, sigma2: float, policy, cfg: OutageConfig, rng: RngStream,
                  codec_cfg: CodecConfig = CodecConfig(), power: float = 1.0, n_streams: int = 2,
                  distortion_fn=None) -> OutageEstimate:
    if not images:
        raise InvalidInputError("no images")
    tape = make_tape(len(images), cfg.trials, rng)
    runner = None if distortion_fn is not None else LinkRunner(images, params, codec_cfg, power, n_streams)
    return run_sdop(tape, sigma2, policy, cfg, runner, distortion_fn).estimate


def paired_difference(outages_a, outages_b, confidence: float = 0.95):
    """Mean of a - b over paired trials, its standard error and the
    one-sided margin z * SE. ``a`` is taken as no worse than ``b`` when
    mean <= margin."""
    a = np.asarray(outages_a, dtype=float)
    b = np.asarray(outages_b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise InvalidInputError("need two equal-length outage records with at least 2 trials")
    diff = a - b
    se = float(diff.std(ddof=1) / math.sqrt(diff.size))
    z = float(norm.ppf(confidence))
    return float(diff.mean()), se, z * se
