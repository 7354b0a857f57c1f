"""Clustered mmWave MIMO channel and the precoded narrowband link.

The channel is the Saleh-Valenzuela clustered model with half-wavelength
uniform linear arrays at both ends.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannelWarning, InvalidInputError, PowerConstraintError
from .numerics import RngStream, as_generator, gaussian_complex, svd

POWER_TOL = 1e-6


@dataclass(frozen=True)
class ChannelParams:
    n_tx: int = 16
    n_rx: int = 16
    n_clusters: int = 4
    n_rays: int = 5
    angle_spread: float = math.radians(7.5)

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_clusters", "n_rays"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.angle_spread < 0:
            raise InvalidInputError("angle_spread must be >= 0")


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    params: ChannelParams
    seed_tag: RngStream | None = None


@dataclass(frozen=True)
class LinkConfig:
    power: float = 1.0
    noise_variance: float = 1.0
    n_streams: int = 2

    def __post_init__(self):
        if not (self.power > 0 and self.noise_variance > 0):
            raise InvalidInputError("power and noise_variance must be positive")
        if self.n_streams < 1:
            raise InvalidInputError("n_streams must be >= 1")

    @classmethod
    def from_snr_db(cls, snr: float, power: float = 1.0, n_streams: int = 2) -> "LinkConfig":
        return cls(power=power, noise_variance=power / 10.0 ** (snr / 10.0), n_streams=n_streams)

    @property
    def snr_db(self) -> float:
        return snr_db(self.power, self.noise_variance)


def ula_steering(n: int, angle) -> np.ndarray:
    """Unit-norm half-wavelength ULA response(s); one column per angle."""
    angle = np.atleast_1d(np.asarray(angle, dtype=float))
    k = np.arange(n)[:, None]
    return np.exp(1j * np.pi * k * np.sin(angle)[None, :]) / np.sqrt(n)


def sample_channel(params: ChannelParams, rng) -> ChannelRealization:
    g = as_generator(rng)
    n_paths = params.n_clusters * params.n_rays
    centers_t = g.uniform(0.0, 2 * np.pi, params.n_clusters)
    centers_r = g.uniform(0.0, 2 * np.pi, params.n_clusters)
    aod = np.repeat(centers_t, params.n_rays) + g.laplace(0.0, params.angle_spread, n_paths)
    aoa = np.repeat(centers_r, params.n_rays) + g.laplace(0.0, params.angle_spread, n_paths)
    alpha = gaussian_complex(g, n_paths, 1.0)
    a_r = ula_steering(params.n_rx, aoa)
    a_t = ula_steering(params.n_tx, aod)
    H = np.sqrt(params.n_tx * params.n_rx / n_paths) * (a_r * alpha) @ a_t.conj().T
    return ChannelRealization(H, params, rng if isinstance(rng, RngStream) else None)


def _as_matrix(ch):
    return ch.H if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=np.complex128)


def svd_precoder(ch, d: int):
    """First ``d`` right/left singular vectors of the channel: (V, U, sigma)."""
    H = _as_matrix(ch)
    if not 1 <= d <= min(H.shape):
        raise InvalidInputError(f"stream count {d} outside [1, {min(H.shape)}]")
    U, s, V = svd(H)
    if np.any(s[:d] == 0):
        warnings.warn(f"channel rank below {d}; zero singular values retained", DegenerateChannelWarning)
    return V[:, :d], U[:, :d], s[:d]


def transmit(x, V, ch, sigma2: float, rng=None, power: float | None = None):
    """y = H V x + n.

    ``x`` is one d-vector or a (d, n_blocks) array of blocks, one per column.
    When ``power`` is given, the mean block power ||Vx||^2 may not exceed it.
    """
    H = _as_matrix(ch)
    x = np.asarray(x, dtype=np.complex128)
    s = V @ x
    if power is not None:
        per_block = np.sum(np.abs(s) ** 2, axis=0)
        if np.mean(per_block) > power * (1 + POWER_TOL):
            raise PowerConstraintError(f"mean block power {np.mean(per_block):.6g} exceeds P = {power}")
    y = H @ s
    if sigma2 < 0:
        raise InvalidInputError("noise variance must be >= 0")
    if sigma2 > 0:
        if rng is None:
            raise InvalidInputError("noisy transmission needs an rng")
        y = y + gaussian_complex(rng, y.size, sigma2).reshape(y.shape)
    return y


def combine(y, U) -> np.ndarray:
    y = np.asarray(y)
    U = np.asarray(U)
    if U.ndim != 2 or y.shape[0] != U.shape[0]:
        raise InvalidInputError(f"combiner shape {U.shape} does not match signal shape {y.shape}")
    return U.conj().T @ y


def snr_db(P: float, sigma2: float) -> float:
    if not (P > 0 and sigma2 > 0):
        raise InvalidInputError("SNR needs positive power and noise variance")
    return 10.0 * math.log10(P / sigma2)


def power_scale(blocks, V, P: float) -> float:
    """Global scalar making the mean block power ||V x||^2 equal to P."""
    blocks = np.asarray(blocks)
    mean_power = np.mean(np.sum(np.abs(V @ blocks) ** 2, axis=0))
    if mean_power == 0:
        return 1.0
    return math.sqrt(P / mean_power)


def power_normalize(blocks, V, P: float) -> np.ndarray:
    return np.asarray(blocks) * power_scale(blocks, V, P)
