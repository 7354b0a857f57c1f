import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scansim.allocator import (AllocationStrategy, OutageTable, average_length, build_outage_table,
                               exhaustive_oracle, feasibility_report, greedy_gap_report, indicator_bits,
                               pack_indicators, predicted_outages, random_monotone_table, solve_group,
                               solve_instance, unpack_indicators)
from scansim.csi import LengthSet
from scansim.errors import FormatError, InfeasibleBudgetError, InvalidInputError, SearchSpaceTooLargeError

L3 = LengthSet((32, 64, 96))
# row m is first satisfied at level m + 1
STAIR = OutageTable(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0]]), L3)


def test_solve_instance_examples():
    L4 = LengthSet((32, 64, 96, 128))
    assert solve_instance([5, 4, 3, 2], 3.5, L4) == (96, True)
    assert solve_instance([5, 4, 3, 2], 100, L4) == (32, True)
    assert solve_instance([5, 4, 3, 2], 1, L4) == (128, False)
    with pytest.raises(InvalidInputError):
        solve_instance([1, 2], 1, L4)


def test_solve_instance_brute_force():
    g = np.random.default_rng(0)
    L = LengthSet()
    for _ in range(1000):
        d = np.minimum.accumulate(g.exponential(1.0, 6))
        D_th = g.exponential(0.5)
        best = next((B for B, v in zip(L, d) if v <= D_th), None)
        assert solve_instance(d, D_th, L) == ((best, True) if best is not None else (L[-1], False))


def test_feasibility_report():
    r = feasibility_report([[3, 2, 1], [9, 9, 9]], 2, L3)
    assert r.feasible == (True, False) and r.chosen == (64, 96)


def test_build_outage_table():
    assert not build_outage_table(np.zeros((3, 3)), 1.0, L3).G.any()
    t = build_outage_table([[2.0, 1.0, 0.5]], 1.0, L3)
    assert t.G.tolist() == [[1, 0, 0]]
    g = np.random.default_rng(1)
    d = np.minimum.accumulate(g.exponential(1, (20, 3)), axis=1)
    assert build_outage_table(d, 0.7, L3).is_monotone()
    with pytest.raises(InvalidInputError):
        OutageTable(np.array([[0, 2, 0]]), L3)


def test_hand_traces():
    a = solve_group(STAIR, 64)
    assert a.values == (32, 64, 96) and a.average_length == 64 and predicted_outages(STAIR, a.omega) == 0
    assert exhaustive_oracle(STAIR, 64)[0] == 0
    b = solve_group(STAIR, 48)
    assert b.values == (32, 64, 32) and predicted_outages(STAIR, b.omega) == 1
    assert exhaustive_oracle(STAIR, 48)[0] == 1


def test_all_ones_stays_at_bottom():
    t = OutageTable(np.ones((4, 3), dtype=int), L3)
    assert solve_group(t, 96).values == (32,) * 4


def test_budget_errors():
    with pytest.raises(InfeasibleBudgetError):
        solve_group(STAIR, 31)
    with pytest.raises(InfeasibleBudgetError):
        exhaustive_oracle(STAIR, 20)


def test_literal_switch_differs_from_default():
    t = OutageTable(np.array([[1, 0, 0], [1, 1, 0], [1, 1, 0]]), L3)
    # level 2 raises image 0, level 3 raises image 1 to exactly the budget, image 2 breaks it
    assert solve_group(t, 64).values == (64, 96, 32)
    lit = solve_group(t, 64, literal=True)
    assert lit.values == (64, 96, 64)
    assert lit.average_length > 64


def test_group_average_constraint_always_holds():
    g = np.random.default_rng(2)
    for _ in range(1000):
        T = int(g.integers(1, 7))
        M = int(g.integers(1, 30))
        L = LengthSet(tuple(32 * (i + 1) for i in range(T)))
        t = OutageTable(random_monotone_table(g, M, T), L)
        L_th = float(g.uniform(L[0], L[-1]))
        a = solve_group(t, L_th)
        assert a.average_length <= L_th
        assert solve_group(t, L_th) == a


@given(st.integers(0, 2**31))
def test_greedy_never_beats_oracle(seed):
    g = np.random.default_rng(seed)
    M, T = int(g.integers(1, 7)), int(g.integers(1, 5))
    L = LengthSet(tuple(32 * (i + 1) for i in range(T)))
    t = OutageTable(random_monotone_table(g, M, T), L)
    L_th = float(g.uniform(L[0], L[-1]))
    best, strat = exhaustive_oracle(t, L_th)
    assert predicted_outages(t, solve_group(t, L_th).omega) >= best
    assert predicted_outages(t, strat.omega) == best and strat.average_length <= L_th + 1e-9


def test_oracle_matches_naive_enumeration():
    g = np.random.default_rng(3)
    for _ in range(50):
        M, T = int(g.integers(1, 5)), int(g.integers(1, 4))
        L = LengthSet(tuple(32 * (i + 1) for i in range(T)))
        t = OutageTable(random_monotone_table(g, M, T), L)
        L_th = float(g.uniform(L[0], L[-1]))
        naive = min(sum(t.G[m, w[m]] for m in range(M))
                    for w in itertools.product(range(T), repeat=M) if sum(L[i] for i in w) <= L_th * M)
        assert exhaustive_oracle(t, L_th)[0] == naive


def test_oracle_special_cases():
    g = np.random.default_rng(4)
    for _ in range(30):
        d = np.minimum.accumulate(g.exponential(1, (1, 3)), axis=1)
        t = build_outage_table(d, 0.5, L3)
        # M = 1 with the full budget reduces to the per-image rule
        assert exhaustive_oracle(t, 96)[0] == int(not solve_instance(d[0], 0.5, L3).feasible)
    t = OutageTable(random_monotone_table(g, 6, 3), L3)
    assert exhaustive_oracle(t, 96)[0] == int(t.G.all(axis=1).sum())
    with pytest.raises(SearchSpaceTooLargeError):
        exhaustive_oracle(OutageTable(np.zeros((15, 3), dtype=int), L3), 64)


def test_gap_report():
    rep = greedy_gap_report(np.random.default_rng(5), 200)
    assert rep["instances"] == 200 and sum(rep["gap_counts"].values()) == 200
    assert rep["greedy_below_optimum"] == 0 and min(rep["gap_counts"]) >= 0


def test_average_length():
    assert average_length((32, 64, 96)) == 64
    assert average_length((32,) * 5) == 32
    assert average_length((128,)) == 128
    assert average_length((0, 2), L3) == 64
    with pytest.raises(InvalidInputError):
        average_length(())
    with pytest.raises(InvalidInputError):
        AllocationStrategy((3,), L3)


def test_indicator_bits():
    assert indicator_bits(4) == 2
    assert indicator_bits(6) == 3
    assert indicator_bits(4, 10) == 20
    assert indicator_bits(1, 5) == 0


@given(st.integers(1, 9), st.data())
def test_indicator_round_trip(T, data):
    omega = data.draw(st.lists(st.integers(0, T - 1), min_size=1, max_size=40))
    blob = pack_indicators(omega, T)
    assert len(blob) == -(-indicator_bits(T, len(omega)) // 8)
    assert unpack_indicators(blob, T, len(omega)) == tuple(omega)


def test_indicator_layout_and_errors():
    assert pack_indicators([0, 1, 2, 3], 4) == bytes([0b00011011])
    assert pack_indicators([5, 1], 6) == bytes([0b10100100])
    with pytest.raises(InvalidInputError):
        pack_indicators([4], 4)
    with pytest.raises(FormatError):
        unpack_indicators(b"\x00\x00", 4, 2)
    with pytest.raises(FormatError):
        unpack_indicators(bytes([0b11100000]), 6, 1)
