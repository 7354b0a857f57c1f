"""Codeword-length allocation from predicted distortions.

Instance-wise: the shortest length meeting the threshold.
Group-wise: a bottom-up water-filling pass that raises images level by
level under an average-length budget, cheapest satisfiable images first.
"""
import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .csi import LengthSet
from .errors import FormatError, InfeasibleBudgetError, InvalidInputError, SearchSpaceTooLargeError
from .numerics import as_generator

ORACLE_LIMIT = 10**7


class InstanceSolution(NamedTuple):
    B: int
    feasible: bool


@dataclass(frozen=True)
class OutageTable:
    """G[m, t] = 1 when image m is predicted to violate the threshold at length t."""

    G: np.ndarray
    lengths: LengthSet

    def __post_init__(self):
        G = np.asarray(self.G)
        if G.ndim != 2 or G.shape[1] != len(self.lengths):
            raise InvalidInputError(f"table must be M x {len(self.lengths)}, got shape {G.shape}")
        if not np.all((G == 0) | (G == 1)):
            raise InvalidInputError("table entries must be 0 or 1")
        object.__setattr__(self, "G", G.astype(np.int8))

    @property
    def n_images(self) -> int:
        return self.G.shape[0]

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.G, axis=1) <= 0))


@dataclass(frozen=True)
class AllocationStrategy:
    omega: tuple
    lengths: LengthSet

    def __post_init__(self):
        omega = tuple(int(i) for i in self.omega)
        if any(not 0 <= i < len(self.lengths) for i in omega):
            raise InvalidInputError("allocation index outside the length set")
        object.__setattr__(self, "omega", omega)

    @property
    def values(self) -> tuple:
        return tuple(self.lengths[i] for i in self.omega)

    @property
    def average_length(self) -> float:
        return average_length(self.values)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: tuple
    chosen: tuple


def average_length(omega, lengths: LengthSet | None = None) -> float:
    """Mean length. With ``lengths``, ``omega`` holds indices into it."""
    vals = [lengths[i] for i in omega] if lengths is not None else list(omega)
    if not vals:
        raise InvalidInputError("empty allocation")
    return float(np.mean(vals))


def solve_instance(d_hat, D_th: float, lengths: LengthSet = LengthSet()) -> InstanceSolution:
    d = np.asarray(d_hat, dtype=float)
    if d.shape != (len(lengths),):
        raise InvalidInputError(f"need one prediction per length, got {d.shape}")
    ok = np.flatnonzero(d <= D_th)
    if ok.size == 0:
        return InstanceSolution(lengths[-1], False)
    return InstanceSolution(lengths[int(ok[0])], True)


def feasibility_report(d_hat_matrix, D_th: float, lengths: LengthSet = LengthSet()) -> FeasibilityReport:
    sols = [solve_instance(row, D_th, lengths) for row in np.asarray(d_hat_matrix, dtype=float)]
    return FeasibilityReport(tuple(s.feasible for s in sols), tuple(s.B for s in sols))


def build_outage_table(d_hat_matrix, D_th: float, lengths: LengthSet = LengthSet()) -> OutageTable:
    d = np.asarray(d_hat_matrix, dtype=float)
    if d.ndim != 2:
        raise InvalidInputError("prediction table must be 2-D")
    return OutageTable((d > D_th).astype(np.int8), lengths)


def _check_budget(L_th, lengths):
    if L_th < lengths[0]:
        raise InfeasibleBudgetError(f"average budget {L_th} is below the shortest length {lengths[0]}")


def solve_group(table: OutageTable, L_th: float, lengths: LengthSet | None = None,
                literal: bool = False) -> AllocationStrategy:
    """Group-wise water-filling.

    Every image starts at the shortest length. Levels are visited in
    ascending order; an undetermined image whose threshold is met at the
    level is raised to it. If that pushes the average above ``L_th`` the
    image goes back to its previous length and the pass stops.

    ``literal=True`` instead sets the violating image to the level just
    below and only moves on to the next level; the budget then is not
    guaranteed.
    """
    lengths = lengths if lengths is not None else table.lengths
    if tuple(lengths) != tuple(table.lengths):
        raise InvalidInputError("table and length set disagree")
    _check_budget(L_th, lengths)
    G = table.G
    M, T = G.shape
    omega = [0] * M
    total = M * lengths[0]
    undetermined = list(range(M))
    for t in range(T):
        if not undetermined:
            break
        settled = []
        stop = False
        for i in undetermined:
            if G[i, t]:
                continue
            prior = omega[i]
            total += lengths[t] - lengths[prior]
            omega[i] = t
            if total > L_th * M:
                if literal:
                    back = max(t - 1, 0)
                    total += lengths[back] - lengths[t]
                    omega[i] = back
                    break
                total += lengths[prior] - lengths[t]
                omega[i] = prior
                stop = True
                break
            settled.append(i)
        undetermined = [i for i in undetermined if i not in settled]
        if stop:
            break
    return AllocationStrategy(tuple(omega), lengths)


def predicted_outages(table: OutageTable, omega) -> int:
    idx = np.asarray(omega, dtype=int)
    return int(table.G[np.arange(table.n_images), idx].sum())


def exhaustive_oracle(table: OutageTable, L_th: float, lengths: LengthSet | None = None):
    """(minimum predicted outage count, one minimising allocation) over every budget-feasible Ω.

    Ties resolve to the first allocation in mixed-radix order (image 0 most significant).
    """
    lengths = lengths if lengths is not None else table.lengths
    _check_budget(L_th, lengths)
    M, T = table.G.shape
    if T**M > ORACLE_LIMIT:
        raise SearchSpaceTooLargeError(f"{T}^{M} assignments exceeds the limit of {ORACLE_LIMIT}")
    L = np.asarray(tuple(lengths), dtype=float)
    best, best_omega = None, None
    n_total, chunk = T**M, 1 << 16
    weights = T ** np.arange(M - 1, -1, -1)
    for start in range(0, n_total, chunk):
        codes = np.arange(start, min(start + chunk, n_total))
        idx = (codes[:, None] // weights[None, :]) % T
        ok = L[idx].sum(axis=1) <= L_th * M + 1e-9
        if not np.any(ok):
            continue
        idx = idx[ok]
        counts = table.G[np.arange(M)[None, :], idx].sum(axis=1)
        j = int(np.argmin(counts))
        if best is None or counts[j] < best:
            best, best_omega = int(counts[j]), tuple(int(v) for v in idx[j])
    return best, AllocationStrategy(best_omega, lengths)


def indicator_bits(T: int, M: int = 1) -> int:
    if T < 1 or M < 1:
        raise InvalidInputError("need T >= 1 and M >= 1")
    return M * math.ceil(math.log2(T)) if T > 1 else 0


def pack_indicators(omega, T: int) -> bytes:
    """Level indices as a big-endian bitstream, ceil(log2 T) bits each, zero padded."""
    width = indicator_bits(T)
    bits = []
    for i in omega:
        if not 0 <= int(i) < T:
            raise InvalidInputError(f"level index {i} outside [0, {T})")
        bits.extend((int(i) >> (width - 1 - k)) & 1 for k in range(width))
    return np.packbits(np.array(bits, dtype=np.uint8), bitorder="big").tobytes() if bits else b""


def unpack_indicators(data: bytes, T: int, M: int) -> tuple:
    width = indicator_bits(T)
    need = math.ceil(width * M / 8)
    if len(data) != need:
        raise FormatError(f"indicator stream for {M} images needs {need} bytes, got {len(data)}", offset=len(data))
    if width == 0:
        return (0,) * M
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")[: width * M]
    vals = bits.reshape(M, width) @ (1 << np.arange(width - 1, -1, -1))
    if np.any(vals >= T):
        raise FormatError("indicator value outside the length set", offset=0)
    return tuple(int(v) for v in vals)


def random_monotone_table(rng, M: int, T: int) -> np.ndarray:
    """Rows are 1 up to a random first-satisfied level, 0 after (T means never)."""
    g = as_generator(rng)
    first = g.integers(0, T + 1, size=M)
    return (np.arange(T)[None, :] < first[:, None]).astype(np.int8)


def greedy_gap_report(rng, n_instances: int = 1000, M_max: int = 8, T_max: int = 4,
                      lengths_pool=(32, 64, 96, 128)) -> dict:
    """Greedy-minus-optimal predicted outage counts over random monotone tables."""
    g = as_generator(rng)
    gaps = Counter()
    worse = 0
    for _ in range(int(n_instances)):
        M = int(g.integers(1, M_max + 1))
        T = int(g.integers(1, T_max + 1))
        lengths = LengthSet(tuple(lengths_pool[:T]))
        table = OutageTable(random_monotone_table(g, M, T), lengths)
        L_th = float(g.uniform(lengths[0], lengths[-1]))
        omega = solve_group(table, L_th)
        greedy = predicted_outages(table, omega.omega)
        optimum, _ = exhaustive_oracle(table, L_th)
        gaps[greedy - optimum] += 1
        worse += greedy < optimum
    return {"instances": int(n_instances), "gap_counts": dict(sorted(gaps.items())),
            "greedy_below_optimum": int(worse)}
