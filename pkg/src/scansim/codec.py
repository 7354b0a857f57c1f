"""Channel-adaptive analog image codec and distortion metrics.

Encoding takes an orthonormal 2-D DCT of every color plane and keeps the
2K lowest-frequency coefficients in zigzag order (ties between planes
broken by plane index). It pairs them into K complex symbols and weights
each stream by a water-filling gain over the eigenmodes of the channel
estimate. Streams take contiguous runs of the scan order: with
n = ceil(K / d) blocks, symbol k rides on stream ``k // n``, so the
strongest eigenmode carries the lowest frequencies.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, idctn

from .channel import ChannelRealization, LinkConfig, combine, power_scale, svd_precoder, transmit
from .csi import CsiCodeword, decode_csi
from .errors import InvalidInputError

PSNR_CAP = 100.0


@dataclass(frozen=True)
class ImageSample:
    """Pixels in [0, 1] with shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.size == 0:
            raise InvalidInputError(f"image must be (h, w, c) with N > 0, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def checked(cls, pixels) -> "ImageSample":
        img = cls(pixels)
        if not np.all(np.isfinite(img.pixels)) or img.pixels.min() < 0 or img.pixels.max() > 1:
            raise InvalidInputError("pixels must lie in [0, 1]")
        return img

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> int:
        return self.pixels.size


@dataclass(frozen=True)
class SymbolVector:
    """Channel symbols plus the side information the decoder needs.

    ``scale`` is the unit-power normalisation constant and ``gains`` the
    per-stream amplitudes; both are deterministic functions of the source
    and the shared channel estimate.
    """

    symbols: np.ndarray
    bandwidth_ratio: float
    scale: float = 1.0
    gains: np.ndarray | None = None
    n_coefficients: int = 0


@dataclass(frozen=True)
class CodecConfig:
    rho: float = 1 / 6
    gain_mode: bool = True
    clamp: bool = True

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise InvalidInputError(f"bandwidth ratio must be in (0, 1], got {self.rho}")


class PsnrDb(float):
    """PSNR in dB; ``exact`` marks a zero-MSE comparison reported at the cap."""

    exact = False

    def __new__(cls, value, exact=False):
        obj = super().__new__(cls, value)
        obj.exact = exact
        return obj


@lru_cache(maxsize=16)
def zigzag_order(height: int, width: int) -> np.ndarray:
    """Flat (row-major) indices of an h x w grid in JPEG zigzag order."""
    cells = [(u, v) for u in range(height) for v in range(width)]
    cells.sort(key=lambda uv: (uv[0] + uv[1], uv[1] if (uv[0] + uv[1]) % 2 == 0 else uv[0]))
    return np.array([u * width + v for u, v in cells])


@lru_cache(maxsize=16)
def scan_order(height: int, width: int, channels: int) -> np.ndarray:
    """Flat indices into an (h, w, c) coefficient array, lowest frequency first."""
    zz = zigzag_order(height, width)
    order = (zz[:, None] * channels + np.arange(channels)[None, :]).ravel()
    order.setflags(write=False)
    return order


def band_slices(n: int, n_bands: int):
    edges = np.linspace(0, n, n_bands + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def dct_coefficients(s: ImageSample) -> np.ndarray:
    """Orthonormal per-plane DCT, flattened in scan order."""
    coeffs = dctn(s.pixels, type=2, axes=(0, 1), norm="ortho")
    return coeffs.ravel()[scan_order(*s.pixels.shape)]


def from_dct_coefficients(scanned, shape) -> np.ndarray:
    grid = np.zeros(int(np.prod(shape)))
    grid[scan_order(*shape)] = scanned
    return idctn(grid.reshape(shape), type=2, axes=(0, 1), norm="ortho")


def n_symbols(n_pixels: int, rho: float) -> int:
    return int(math.floor(rho * n_pixels + 1e-9))


def waterfill(mode_gains_sq, noise: float, total: float) -> np.ndarray:
    """Powers p_i = max(0, mu - noise / g_i) summing to ``total``."""
    g = np.asarray(mode_gains_sq, dtype=float)
    p = np.zeros_like(g)
    alive = g > 0
    if not np.any(alive):
        return np.full_like(g, total / g.size)
    inv = np.full_like(g, np.inf)
    inv[alive] = noise / g[alive]
    order = np.argsort(inv, kind="stable")
    for m in range(int(alive.sum()), 0, -1):
        idx = order[:m]
        # mu - inv written to avoid cancelling against a huge 1/g
        q = total / m + (inv[idx].mean() - inv[idx])
        if q.min() > 0:
            p[idx] = q
            break
    return p


def symbol_streams(K: int, n_streams: int) -> np.ndarray:
    """Stream index of each symbol: contiguous runs of ceil(K / d)."""
    return np.arange(K) // -(-K // n_streams)


def to_blocks(symbols, d: int) -> np.ndarray:
    """(d, n_blocks) transmit blocks; row i is stream i, zero padded at the tail."""
    K = symbols.size
    n_blocks = -(-K // d)
    padded = np.zeros(n_blocks * d, dtype=np.complex128)
    padded[:K] = symbols
    return padded.reshape(d, n_blocks)


def from_blocks(blocks, K: int) -> np.ndarray:
    return np.asarray(blocks).ravel()[:K]


def stream_gains(sigma_hat, sigma2: float, cfg: CodecConfig, n_streams: int = 2, power: float = 1.0) -> np.ndarray:
    """Per-stream amplitudes, mean square 1, water-filled over the ``n_streams``
    strongest singular values of the channel estimate."""
    if not cfg.gain_mode:
        return np.ones(n_streams)
    sig = np.zeros(n_streams)
    given = np.asarray(sigma_hat, dtype=float)[:n_streams]
    sig[: given.size] = given
    # unit symbol power puts power / n_streams on each stream
    noise = sigma2 * n_streams / power
    return np.sqrt(waterfill(sig**2, noise, float(n_streams)))


def _estimate_modes(H_hat, n_streams):
    """(V_hat, sigma_hat) of the estimate; an all-zero estimate gives identity modes."""
    H_hat = np.asarray(H_hat, dtype=np.complex128)
    if not np.any(H_hat):
        return np.eye(H_hat.shape[1], n_streams, dtype=np.complex128), np.zeros(n_streams)
    V, _, sig = svd_precoder(H_hat, n_streams)
    return V, sig


def encode_image(s: ImageSample, H_hat, sigma2: float, cfg: CodecConfig, n_streams: int = 2,
                 power: float = 1.0, sigma_hat=None) -> SymbolVector:
    """``sigma_hat`` may carry precomputed singular values of ``H_hat``."""
    N = s.size
    K = n_symbols(N, cfg.rho)
    if K < 2:
        raise InvalidInputError(f"rho * N = {cfg.rho * N:.3g} < 2; nothing to transmit")
    kept = min(2 * K, N)
    coeffs = dct_coefficients(s)[:kept]
    if kept % 2:
        coeffs = np.append(coeffs, 0.0)
    u = np.zeros(K, dtype=np.complex128)
    u[: coeffs.size // 2] = coeffs[0::2] + 1j * coeffs[1::2]
    if sigma_hat is None and cfg.gain_mode:
        sigma_hat = _estimate_modes(H_hat, n_streams)[1]
    gains = stream_gains(sigma_hat if cfg.gain_mode else None, sigma2, cfg, n_streams, power)
    weighted = u * gains[symbol_streams(K, n_streams)]
    energy = np.sum(np.abs(weighted) ** 2)
    scale = math.sqrt(K / energy) if energy > 0 else 1.0
    return SymbolVector(weighted * scale, K / N, scale, gains, kept)


def decode_image(z_hat: SymbolVector, H, sigma2: float, cfg: CodecConfig, shape=(32, 32, 3),
                 n_streams: int = 2, power: float = 1.0) -> ImageSample:
    """Invert gains and pairing, zero-fill unretained coefficients, inverse DCT.

    ``H`` must be the channel estimate the encoder used; gains are
    recomputed from it unless ``z_hat`` carries them.
    """
    N = int(np.prod(shape))
    K = z_hat.symbols.size
    gains = z_hat.gains
    if gains is None:
        sig = _estimate_modes(H, n_streams)[1] if cfg.gain_mode else None
        gains = stream_gains(sig, sigma2, cfg, n_streams, power)
    g = gains[symbol_streams(K, len(gains))] * z_hat.scale
    u = np.zeros(K, dtype=np.complex128)
    nz = g > 0
    u[nz] = z_hat.symbols[nz] / g[nz]
    kept = z_hat.n_coefficients or min(2 * K, N)
    coeffs = np.empty(2 * K)
    coeffs[0::2] = u.real
    coeffs[1::2] = u.imag
    scanned = np.zeros(N)
    scanned[:kept] = coeffs[:kept]
    px = from_dct_coefficients(scanned, shape)
    if cfg.clamp:
        px = np.clip(px, 0.0, 1.0)
    return ImageSample(px)


def zonal_truncation(s: ImageSample, cfg: CodecConfig) -> ImageSample:
    """Reconstruction from the retained coefficients alone (no channel)."""
    kept = min(2 * n_symbols(s.size, cfg.rho), s.size)
    scanned = dct_coefficients(s)
    scanned[kept:] = 0.0
    px = from_dct_coefficients(scanned, s.pixels.shape)
    return ImageSample(np.clip(px, 0.0, 1.0) if cfg.clamp else px)


def mse_loss(s, s_hat) -> float:
    a = s.pixels if isinstance(s, ImageSample) else np.asarray(s, dtype=float)
    b = s_hat.pixels if isinstance(s_hat, ImageSample) else np.asarray(s_hat, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(s, s_hat, max_val: float = 1.0, cap: float = PSNR_CAP) -> PsnrDb:
    if not max_val > 0:
        raise InvalidInputError("max_val must be positive")
    mse = mse_loss(s, s_hat)
    if mse == 0:
        return PsnrDb(cap, exact=True)
    return PsnrDb(10.0 * math.log10(max_val**2 / mse))


def psnr_to_mse(gamma_db, max_val: float = 1.0):
    return max_val**2 * 10.0 ** (-np.asarray(gamma_db, dtype=float) / 10.0)


def mse_to_psnr(mse, max_val: float = 1.0):
    return 10.0 * np.log10(max_val**2 / np.asarray(mse, dtype=float))


def teacher_features(z: SymbolVector, n_bands: int = 16) -> np.ndarray:
    sym = z.symbols
    return np.array([math.log1p(float(np.sum(np.abs(sym[sl]) ** 2))) for sl in band_slices(sym.size, n_bands)])


def band_errors(s: ImageSample, s_hat: ImageSample, n_bands: int = 16) -> np.ndarray:
    """Squared DCT-domain error of the reconstruction, per scan-order band."""
    diff2 = (dct_coefficients(s) - dct_coefficients(s_hat)) ** 2
    return np.array([float(np.sum(diff2[sl])) for sl in band_slices(diff2.size, n_bands)])


@dataclass(frozen=True)
class Transmission:
    s_hat: ImageSample
    psnr_db: float
    z: SymbolVector
    z_hat: SymbolVector


def lmmse_matrix(G, prior_power, sigma2: float) -> np.ndarray:
    """W = C G^H (G C G^H + sigma2 I)^-1 with C = diag(prior_power)."""
    C = np.diag(np.asarray(prior_power, dtype=float))
    d = G.shape[0]
    M = G @ C @ G.conj().T + sigma2 * np.eye(d)
    # noiseless links with a rank-deficient effective channel need the pseudo-inverse
    return C @ G.conj().T @ (np.linalg.pinv(M) if sigma2 == 0 else np.linalg.inv(M))


def send_image(s: ImageSample, H, H_hat, link: LinkConfig, cfg: CodecConfig, rng, *,
               estimate_modes=None, true_combiner=None) -> Transmission:
    """Full link for one image given the true channel and the transmitter's estimate.

    ``estimate_modes`` = (V_hat, sigma_hat) and ``true_combiner`` = U let
    sweeps reuse decompositions that do not depend on the noise level.
    """
    d = link.n_streams
    sigma2 = link.noise_variance
    V_hat, sigma_hat = estimate_modes if estimate_modes is not None else _estimate_modes(H_hat, d)
    U = true_combiner if true_combiner is not None else svd_precoder(H, d)[1]

    z = encode_image(s, H_hat, sigma2, cfg, d, link.power, sigma_hat=sigma_hat)
    K = z.symbols.size
    blocks = to_blocks(z.symbols, d)

    a = power_scale(blocks, V_hat, link.power)
    y = transmit(a * blocks, V_hat, H, sigma2, rng, power=link.power)
    x_hat = combine(y, U)
    G = a * (U.conj().T @ H @ V_hat)
    W = lmmse_matrix(G, z.gains**2 if z.gains is not None else np.ones(d), sigma2)
    est = from_blocks(W @ x_hat, K)
    z_hat = SymbolVector(est, z.bandwidth_ratio, z.scale, z.gains, z.n_coefficients)
    s_hat = decode_image(z_hat, H_hat, sigma2, cfg, s.pixels.shape, d, link.power)
    return Transmission(s_hat, float(psnr(s, s_hat)), z, z_hat)


def transmit_image(s: ImageSample, ch, cw: CsiCodeword, link: LinkConfig, cfg: CodecConfig, rng):
    """Recover H_hat from the fed-back codeword, precode with it, combine and
    equalise with the true channel. Returns (s_hat, psnr_db)."""
    H = ch.H if isinstance(ch, ChannelRealization) else np.asarray(ch)
    out = send_image(s, H, decode_csi(cw), link, cfg, rng)
    return out.s_hat, out.psnr_db
