"""CSI feedback: beamspace transform, multi-rate compression and NMSE.

The codec is compressive sensing. A B-dimensional codeword is a seeded
Gaussian projection of the stacked real/imaginary beamspace channel, and
the decoder recovers it with orthogonal matching pursuit.
"""
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import FormatError, InvalidInputError
from .numerics import RngStream, unitary_dft

DEFAULT_LENGTHS = (32, 64, 96, 128, 160, 192)
_HEADER = struct.Struct("<IIII")


@dataclass(frozen=True)
class BeamspaceCsi:
    complex_form: np.ndarray

    @property
    def real_form(self) -> np.ndarray:
        # row-major vec(Re) followed by row-major vec(Im)
        return np.concatenate([self.complex_form.real.ravel(), self.complex_form.imag.ravel()])

    @classmethod
    def from_real_form(cls, vec, n_rx: int, n_tx: int) -> "BeamspaceCsi":
        vec = np.asarray(vec, dtype=float)
        half = n_rx * n_tx
        return cls((vec[:half] + 1j * vec[half:]).reshape(n_rx, n_tx))


@dataclass(frozen=True)
class CsiCodeword:
    values: np.ndarray
    projection_seed: int
    dims: tuple

    @property
    def length(self) -> int:
        return int(self.values.size)

    @property
    def identity_mode(self) -> bool:
        return self.length == 2 * self.dims[0] * self.dims[1]

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(self.length, self.dims[0], self.dims[1], self.projection_seed)
        return header + np.asarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CsiCodeword":
        if len(blob) < _HEADER.size:
            raise FormatError("codeword shorter than its 16-byte header", offset=len(blob))
        B, n_rx, n_tx, seed = _HEADER.unpack_from(blob)
        expected = _HEADER.size + 8 * B
        if len(blob) != expected:
            raise FormatError(f"codeword payload should be {expected} bytes, got {len(blob)}", offset=len(blob))
        values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(float)
        return cls(values, seed, (n_rx, n_tx))


@dataclass(frozen=True)
class LengthSet:
    values: tuple = DEFAULT_LENGTHS

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise InvalidInputError("length set must not be empty")
        if vals[0] < 1 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidInputError(f"length set must be strictly ascending positive integers, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def index(self, length: int) -> int:
        return self.values.index(int(length))


def to_beamspace(H) -> BeamspaceCsi:
    H = np.asarray(H, dtype=np.complex128)
    Fr = unitary_dft(H.shape[0])
    Fl = unitary_dft(H.shape[1])
    return BeamspaceCsi(Fr @ H @ Fl.conj().T)


def from_beamspace(b: BeamspaceCsi) -> np.ndarray:
    Ht = b.complex_form
    Fr = unitary_dft(Ht.shape[0])
    Fl = unitary_dft(Ht.shape[1])
    return Fr.conj().T @ Ht @ Fl


@lru_cache(maxsize=64)
def projection_matrix(seed: int, length: int, ambient: int) -> np.ndarray:
    """Gaussian measurement matrix, entries of variance 1/length, keyed by (seed, length)."""
    g = RngStream(seed, length, (ambient,)).generator()
    A = g.standard_normal((length, ambient)) / np.sqrt(length)
    A.setflags(write=False)
    return A


def _check_seed(seed):
    if not 0 <= int(seed) < 2**32:
        raise InvalidInputError(f"projection seed must fit in 32 bits, got {seed}")
    return int(seed)


def encode_csi(H, B: int, seed: int = 0) -> CsiCodeword:
    H = np.asarray(H, dtype=np.complex128)
    ambient = 2 * H.size
    if not 1 <= int(B) <= ambient:
        raise InvalidInputError(f"codeword length {B} outside [1, {ambient}]")
    seed = _check_seed(seed)
    x = to_beamspace(H).real_form
    if B == ambient:
        values = x.copy()
    else:
        values = projection_matrix(seed, int(B), ambient) @ x
    return CsiCodeword(values, seed, H.shape)


def sparsity_budget(B: int, ratio: int = 4) -> int:
    """Real coefficients the decoder may recover from a length-B codeword."""
    return max(1, B // ratio)


def omp(y, A, k: int, pair_offset: int | None = None, tol: float = 1e-12) -> np.ndarray:
    """Orthogonal matching pursuit: at most ``k`` atoms of ``A`` explaining ``y``.

    With ``pair_offset`` each atom is the column pair (j, j + pair_offset),
    i.e. the real and imaginary part of one complex unknown, selected by
    joint correlation energy. Stops early once the residual falls below
    ``tol * ||y||``.
    """
    y = np.asarray(y, dtype=float)
    n = A.shape[1]
    if pair_offset is None:
        width = n
        expand = lambda atoms: atoms
        col_energy = np.sum(A * A, axis=0)
    else:
        width = pair_offset
        expand = lambda atoms: atoms + [a + pair_offset for a in atoms]
        col_energy = np.sum(A[:, :width] ** 2, axis=0) + np.sum(A[:, width:2 * width] ** 2, axis=0)
    col_energy[col_energy == 0] = np.inf
    max_atoms = A.shape[0] if pair_offset is None else A.shape[0] // 2
    atoms = []
    coef = np.zeros(0)
    residual = y.copy()
    stop = tol * np.linalg.norm(y)
    for _ in range(min(k, max_atoms, width)):
        if np.linalg.norm(residual) <= stop:
            break
        corr = A.T @ residual
        score = corr[:width] ** 2 if pair_offset is None else corr[:width] ** 2 + corr[width:2 * width] ** 2
        score = score / col_energy
        score[atoms] = -1.0
        atoms.append(int(np.argmax(score)))
        cols = expand(atoms)
        coef, *_ = np.linalg.lstsq(A[:, cols], y, rcond=None)
        residual = y - A[:, cols] @ coef
    x = np.zeros(n)
    if atoms:
        x[expand(atoms)] = coef
    return x


def decode_csi(cw: CsiCodeword, sparsity_ratio: int = 4) -> np.ndarray:
    """Recover the spatial channel; real/imaginary parts of each beamspace
    entry are selected together, ``sparsity_budget`` real coefficients in all."""
    n_rx, n_tx = cw.dims
    if cw.identity_mode:
        x = np.asarray(cw.values, dtype=float)
    else:
        half = n_rx * n_tx
        A = projection_matrix(cw.projection_seed, cw.length, 2 * half)
        n_pairs = max(1, sparsity_budget(cw.length, sparsity_ratio) // 2)
        x = omp(cw.values, A, n_pairs, pair_offset=half)
    return from_beamspace(BeamspaceCsi.from_real_form(x, n_rx, n_tx))


def nmse(H, H_hat) -> float:
    H = np.asarray(H)
    H_hat = np.asarray(H_hat)
    if H.shape != H_hat.shape:
        raise InvalidInputError(f"shape mismatch {H.shape} vs {H_hat.shape}")
    ref = np.sum(np.abs(H) ** 2)
    if ref == 0:
        raise InvalidInputError("NMSE undefined for an all-zero reference channel")
    return float(np.sum(np.abs(H - H_hat) ** 2) / ref)
