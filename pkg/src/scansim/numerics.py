"""Complex linear algebra and seeded random streams shared by the pipeline.

Matrices are plain ``numpy`` arrays of dtype ``complex128``.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

_EPS = np.finfo(float).eps


class SvdResult(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class RngStream:
    """Identity of an independent random stream.

    Streams are keyed by ``(master_seed, stream_id, *path)`` through
    ``numpy.random.SeedSequence``, so any trial can rebuild its own draws
    without coordinating with other trials.
    """

    master_seed: int
    stream_id: int = 0
    path: tuple = field(default=())

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_id) & 0xFFFFFFFFFFFFFFFF,) + self.path,
        )
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidInputError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def _check_matrix(A):
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def _round_robin(n):
    """Pairings for one Jacobi sweep; each round holds disjoint column pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(A, tol=_EPS, max_sweeps=60):
    """One-sided Jacobi on a matrix with rows >= cols. Returns (W, V) with W = A V
    having mutually orthogonal columns and V unitary."""
    W = A.copy()
    n = W.shape[1]
    V = np.eye(n, dtype=np.complex128)
    rounds = _round_robin(n)
    floor = (_EPS * np.linalg.norm(A)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for P, Q in rounds:
            ap, aq = W[:, P], W[:, Q]
            alpha = np.einsum("ij,ij->j", ap.conj(), ap).real
            beta = np.einsum("ij,ij->j", aq.conj(), aq).real
            gamma = np.einsum("ij,ij->j", ap.conj(), aq)
            mag = np.abs(gamma)
            active = (mag > tol * np.sqrt(alpha * beta)) & (mag > floor)
            if not np.any(active):
                continue
            rotated = True
            P, Q = P[active], Q[active]
            ap, aq = ap[:, active], aq[:, active]
            alpha, beta, gamma, mag = alpha[active], beta[active], gamma[active], mag[active]
            phase = gamma / mag
            zeta = (beta - alpha) / (2.0 * mag)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            W[:, P] = c * ap - s * phase.conj() * aq
            W[:, Q] = s * phase * ap + c * aq
            vp, vq = V[:, P], V[:, Q]
            V[:, P] = c * vp - s * phase.conj() * vq
            V[:, Q] = s * phase * vp + c * vq
        if not rotated:
            break
    return W, V


def _complete_orthonormal(U, valid):
    """Replace columns of U where ``valid`` is False by an orthonormal complement."""
    m, k = U.shape
    basis = [U[:, j] for j in range(k) if valid[j]]
    out = U.copy()
    candidates = iter(np.eye(m, dtype=np.complex128))
    for j in range(k):
        if valid[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= b * np.vdot(b, v)
            nv = np.linalg.norm(v)
            if nv > 1e-6:
                v /= nv
                basis.append(v)
                out[:, j] = v
                break
    return out


def svd(A) -> SvdResult:
    """Thin SVD ``A = U diag(sigma) V^H`` via one-sided Jacobi.

    sigma is descending. Each column of V is rotated so its first nonzero
    entry is real and positive; U follows. Singular values below the
    rank tolerance are reported as exact zeros.
    """
    A = _check_matrix(A)
    m, n = A.shape
    if m < n:
        U, sigma, V = svd(A.conj().T)
        return SvdResult(V, sigma, U)
    W, V = _jacobi_tall(A)
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    cutoff = max(m, n) * _EPS * (sigma[0] if sigma.size else 0.0) * 16
    valid = sigma > cutoff
    sigma = np.where(valid, sigma, 0.0)
    U = np.zeros_like(W)
    U[:, valid] = W[:, valid] / sigma[valid]
    if not np.all(valid):
        U = _complete_orthonormal(U, valid)

    for j in range(n):
        col = V[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())
        if big.size == 0:
            continue
        lead = col[big[0]]
        rot = np.conj(lead) / abs(lead)
        V[:, j] *= rot
        U[:, j] *= rot
    return SvdResult(U, sigma, V)


def unitary_dft(n: int) -> np.ndarray:
    """Unitary DFT matrix, F[j, k] = exp(-2 pi i j k / n) / sqrt(n)."""
    if int(n) != n or n < 1:
        raise InvalidInputError(f"DFT size must be a positive integer, got {n}")
    n = int(n)
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(-2j * np.pi * jk / n) / np.sqrt(n)


def gaussian_complex(rng, n: int, variance: float) -> np.ndarray:
    """n i.i.d. CN(0, variance) samples; the variance is split evenly across parts."""
    if not variance > 0:
        raise InvalidInputError(f"variance must be positive, got {variance}")
    g = as_generator(rng)
    scale = np.sqrt(variance / 2.0)
    draws = g.standard_normal((int(n), 2))
    return scale * (draws[:, 0] + 1j * draws[:, 1])
