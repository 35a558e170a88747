from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsig.matcher import (HierarchyPlan, MatchParams, MatchTriplet, NoCandidates,
                             accumulated_evaluations, candidate_set, child_ranges, child_scopes,
                             match_level, quadtree_total, round_evaluations, run_hierarchy,
                             segmented_distance, select_threshold, sequence_distance,
                             sort_triplets)
from flowsig.sequences import LevelStates, PatchGrid, StateSequence


def seq(bits, seg_len=500):
    return StateSequence.from_bits(np.array([int(c) for c in bits], dtype=bool)
                                   if isinstance(bits, str) else bits, seg_len)


def frac_distance(a, b):
    """Exact distance on plain bit lists."""
    tot = int(np.sum(a)) + int(np.sum(b))
    if tot == 0:
        return Fraction(1)
    return 1 - Fraction(2 * int(np.sum(np.logical_and(a, b))), tot)


# ------------------------------------------------------------- distance

@pytest.mark.parametrize("a, b, d", [
    ("1011", "1011", 0.0),
    ("1100", "0011", 1.0),
    ("1110", "0110", 0.2),
    ("0000", "0000", 1.0),
    ("0000", "0100", 1.0),
])
def test_sequence_distance_examples(a, b, d):
    assert sequence_distance(seq(a), seq(b)) == pytest.approx(d, abs=0)


def test_length_mismatch_is_an_error():
    with pytest.raises(ValueError):
        sequence_distance(seq("101"), seq("1010"))


@settings(max_examples=200)
@given(st.integers(1, 200).flatmap(
    lambda n: st.tuples(st.lists(st.booleans(), min_size=n, max_size=n),
                        st.lists(st.booleans(), min_size=n, max_size=n))),
    st.integers(1, 64))
def test_distance_axioms(pair, seg_len):
    a, b = (np.array(x, dtype=bool) for x in pair)
    sa, sb = seq(a, seg_len), seq(b, seg_len)
    d = sequence_distance(sa, sb)
    assert 0.0 <= d <= 1.0
    assert d == sequence_distance(sb, sa)
    assert d == float(frac_distance(a, b))
    if a.any() or b.any():
        assert (d == 0.0) == (np.array_equal(a, b))
        assert (d == 1.0) == (not np.any(a & b))


def test_segmented_identical_never_aborts():
    s = seq(np.tile([1, 0, 0], 400).astype(bool), 100)
    r = segmented_distance(s, s, 0.0, 1)
    assert (r.distance, r.aborted) == (0.0, False)


def test_segmented_aborts_after_first_bad_segment():
    # first segment: 1 - 2*1/(10+10) = 0.9
    a = np.zeros(40, bool)
    b = np.zeros(40, bool)
    a[:10] = True
    b[9:19] = True
    a[20:30] = b[20:30] = True
    r = segmented_distance(seq(a, 20), seq(b, 20), 0.3, 1)
    assert r.aborted and r.segments_evaluated == 1


def test_segmented_accumulates_counts():
    # segment 1: popcounts 3 and 2, overlap 2; segment 2: 1 and 1, overlap 1
    a = seq("1110" + "1000", 4)
    b = seq("0110" + "1000", 4)
    r = segmented_distance(a, b, 1.0, None)
    assert (r.overlap, r.total) == (3, 7)
    assert r.distance == 1 / 7


def test_silent_segments_are_not_bad():
    a = seq("1100" + "0000" + "1100", 4)
    r = segmented_distance(a, a, 0.0, 1)
    assert not r.aborted and r.distance == 0.0


@settings(max_examples=200)
@given(st.integers(1, 300).flatmap(
    lambda n: st.tuples(st.lists(st.booleans(), min_size=n, max_size=n),
                        st.lists(st.booleans(), min_size=n, max_size=n))),
    st.integers(1, 70), st.floats(0, 1))
def test_segmented_without_abort_equals_full(pair, seg_len, thr):
    a, b = (np.array(x, dtype=bool) for x in pair)
    r = segmented_distance(seq(a, seg_len), seq(b, seg_len), thr, None)
    assert not r.aborted
    assert Fraction(r.distance) == Fraction(sequence_distance(seq(a, seg_len), seq(b, seg_len)))


# ------------------------------------------------- filter and threshold

@pytest.mark.parametrize("ones, kept", [(50, True), (49, False), (0, False)])
def test_candidate_boundary(ones, kept):
    bits = np.zeros((1, 1500), bool)
    bits[0, :ones] = True
    lv = LevelStates.from_bits(PatchGrid(0, 8, 8, 8, 8), bits, 500)
    assert bool(candidate_set(lv, 1500, 1 / 30)[0]) is kept


@pytest.mark.parametrize("lam, k", [(6, 2), (1, 12), (2, 6), (12, 1), (5, 3)])
def test_select_threshold_nearest_rank(lam, k):
    d = np.linspace(0.9, 0.01, 12)
    assert select_threshold(d, lam) == sorted(d)[k - 1]


def test_select_threshold_constant_and_empty():
    assert select_threshold([0.3] * 7, 6) == 0.3
    with pytest.raises(NoCandidates):
        select_threshold([], 6)


# --------------------------------------------------------- match_level

def _level(bits, P=8, cols=None, level=0, seg_len=500):
    n = bits.shape[0]
    cols = cols or n
    rows = n // cols
    return LevelStates.from_bits(PatchGrid(level, P, P, cols * P, rows * P), bits, seg_len)


def naive_match(A_bits, B_bits, lam, max_bad, seg_len, frac, scopes=None):
    """Reference implementation on bit lists with exact arithmetic."""
    L = A_bits.shape[1]
    a_c = [i for i in range(len(A_bits)) if Fraction(int(A_bits[i].sum())) >= frac * L]
    b_c = [j for j in range(len(B_bits)) if Fraction(int(B_bits[j].sum())) >= frac * L]
    pairs = [(i, j) for i in a_c for j in b_c if scopes is None or j in scopes.get(i, ())]
    if not pairs:
        return [], None
    seg = slice(0, seg_len)
    d0 = [frac_distance(A_bits[i][seg], B_bits[j][seg]) for i, j in pairs
          if A_bits[i][seg].any() or B_bits[j][seg].any()]
    if not d0:
        return [], None
    thr = sorted(d0)[math.ceil(Fraction(len(d0)) / lam) - 1]
    kept = []
    for i, j in pairs:
        bad = 0
        for k in range(0, L, seg_len):
            a, b = A_bits[i][k:k + seg_len], B_bits[j][k:k + seg_len]
            if (a.any() or b.any()) and frac_distance(a, b) > thr:
                bad += 1
        if max_bad is not None and bad >= max_bad:
            continue
        d = frac_distance(A_bits[i], B_bits[j])
        if d <= thr and np.any(A_bits[i] & B_bits[j]):
            kept.append((i, j, d))
    return kept, thr


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 3, 6, 10]), st.sampled_from([1, 2, None]),
       st.sampled_from([16, 50, 64]))
def test_match_level_matches_naive_oracle(seed, lam, max_bad, seg_len):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(20, 140))
    A = rng.random((6, L)) < rng.uniform(0.05, 0.6)
    B = rng.random((5, L)) < rng.uniform(0.05, 0.6)
    B[0] = A[2]                                   # one planted exact match
    frac = Fraction(1, 30)
    params = MatchParams(lam=lam, max_bad_segments=max_bad or 10**9, min_motion_frac=1 / 30)
    lm = match_level(_level(A, cols=3, seg_len=seg_len), _level(B, cols=5, seg_len=seg_len), params)
    want, thr = naive_match(A, B, lam, max_bad or 10**9, seg_len, frac)
    got = {(t.a[1] * 3 + t.a[2], t.b[2]): t.dist for t in lm.triplets}
    assert got == {(i, j): float(d) for i, j, d in want}
    if thr is not None:
        assert lm.threshold == float(thr)
    assert [t.dist for t in lm.triplets] == sorted(t.dist for t in lm.triplets)


def test_self_match_sanity(rng):
    bits = rng.random((12, 200)) < 0.3
    lv = _level(bits, cols=4)
    lm = match_level(lv, lv, MatchParams())
    best = {}
    for t in lm.triplets:
        best.setdefault(t.a, t)
    assert len(best) == 12
    assert all(t.b == t.a and t.dist == 0.0 for t in best.values())


def test_disjoint_supports_give_nothing():
    A = np.zeros((4, 120), bool)
    B = np.zeros((4, 120), bool)
    A[:, ::2] = True
    B[:, 1::2] = True
    lm = match_level(_level(A), _level(B), MatchParams())
    assert lm.triplets == []


def test_translated_copy_maps_columns(rng):
    rows, cols, k, L = 3, 6, 2, 300
    A = rng.random((rows, cols, L)) < 0.3
    B = rng.random((rows, cols, L)) < 0.3
    B[:, k:] = A[:, :cols - k]
    A_l = _level(A.reshape(-1, L), cols=cols)
    B_l = _level(B.reshape(-1, L), cols=cols)
    lm = match_level(A_l, B_l, MatchParams())
    want, _ = naive_match(A.reshape(-1, L), B.reshape(-1, L), 6, 1, 500, Fraction(1, 30))
    assert {(i, j) for i, j, _ in want} == {(A_l.grid.index(*t.a[1:]), B_l.grid.index(*t.b[1:]))
                                            for t in lm.triplets}
    best = {}
    for t in lm.triplets:
        best.setdefault(t.a, t)
    for r in range(rows):
        for c in range(cols - k):
            assert best[(0, r, c)].b == (0, r, c + k)


def test_tie_break_order():
    ts = [MatchTriplet((0, 1, 0), (0, 0, 1), 0.5), MatchTriplet((0, 0, 1), (0, 0, 0), 0.5),
          MatchTriplet((0, 0, 1), (0, 0, 0), 0.1), MatchTriplet((0, 0, 0), (0, 1, 1), 0.5)]
    assert [t.a for t in sort_triplets(ts)] == [(0, 0, 1), (0, 0, 0), (0, 0, 1), (0, 1, 0)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1, 4), st.floats(1, 4))
def test_stricter_threshold_gives_subset(seed, lam1, extra):
    rng = np.random.default_rng(seed)
    A = _level(rng.random((8, 150)) < 0.3, cols=4)
    B = _level(rng.random((8, 150)) < 0.3, cols=4)
    loose = match_level(A, B, MatchParams(lam=lam1))
    strict = match_level(A, B, MatchParams(lam=lam1 + extra))
    assert {(t.a, t.b) for t in strict.triplets} <= {(t.a, t.b) for t in loose.triplets}


def test_one_to_one_option(rng):
    lv = _level(rng.random((8, 200)) < 0.3, cols=4)
    lm = match_level(lv, lv, MatchParams(lam=1, keep_one_to_many=False))
    assert len({t.a for t in lm.triplets}) == len(lm.triplets)


def test_threads_do_not_change_results(rng):
    A = _level(rng.random((40, 700)) < 0.2, cols=8, seg_len=128)
    B = _level(rng.random((40, 700)) < 0.2, cols=8, seg_len=128)
    import flowsig.matcher as m
    old = m.PAIR_CHUNK
    m.PAIR_CHUNK = 64                       # force several chunks
    try:
        one = match_level(A, B, MatchParams(), threads=1)
        many = match_level(A, B, MatchParams(), threads=4)
    finally:
        m.PAIR_CHUNK = old
    assert one.triplets == many.triplets and one.threshold == many.threshold


def test_params_validation():
    with pytest.raises(ValueError):
        MatchParams(lam=0.5)
    with pytest.raises(ValueError):
        MatchParams(max_bad_segments=0)


# ----------------------------------------------------------- hierarchy

def test_plan_validation():
    assert HierarchyPlan().levels == ((64, 64), (32, 32), (16, 16), (8, 8))
    assert HierarchyPlan.from_range(64, 8, overlap=2).levels[-1] == (8, 4)
    with pytest.raises(ValueError):
        HierarchyPlan(((64, 64), (16, 16)))


def test_child_scopes_without_overlap():
    pa = PatchGrid(0, 16, 16, 64, 64)
    ca = PatchGrid(1, 8, 8, 64, 64)
    scopes = child_scopes([MatchTriplet((0, 1, 2), (0, 0, 3), 0.0)], pa, pa, ca, ca)
    assert sorted(scopes) == [ca.index(r, c) for r in (2, 3) for c in (4, 5)]
    for b in scopes.values():
        assert sorted(b) == [ca.index(r, c) for r in (0, 1) for c in (6, 7)]


def test_child_ranges_follow_centres():
    parent = PatchGrid(0, 16, 8, 64, 64)
    child = PatchGrid(1, 8, 4, 64, 64)
    for idx, (r0, r1, c0, c1) in enumerate(child_ranges(parent, child)):
        x0, y0, x1, y1 = parent.rect(*parent.rowcol(idx))
        for r in range(child.rows):
            for c in range(child.cols):
                x, y = child.center(r, c)
                inside = x0 <= x < x1 and y0 <= y < y1
                assert inside == (r0 <= r < r1 and c0 <= c < c1)


def _pyramid(rng, rows, cols, L=300, levels=4, density=0.3):
    """Independent random sequences per level on a 64-to-8 style grid."""
    out = []
    for i in range(levels):
        P = 8 * 2 ** (levels - 1 - i)
        r, c = rows >> (levels - 1 - i), cols >> (levels - 1 - i)
        bits = rng.random((r * c, L)) < density
        out.append(LevelStates.from_bits(PatchGrid(i, P, P, c * P, r * P), bits, 500))
    return out


def test_identical_videos_dense_diagonal(rng):
    lv = _pyramid(rng, 16, 16)
    for r in run_hierarchy(lv, lv, HierarchyPlan(), MatchParams()):
        best = {}
        for t in r.triplets:
            best.setdefault(t.a, t)
        assert all(t.b == t.a and t.dist == 0.0 for t in best.values())
        assert len(best) == int(candidate_set(lv[r.level]).sum())


def test_eq2_counts_closed_form():
    for ns in (2, 3, 4):
        for T in range(1, 6):
            N = ns ** T
            assert accumulated_evaluations(ns, T) == quadtree_total(ns, N)
    assert round_evaluations(2, 1) == 16
    assert accumulated_evaluations(2, 3) == 336 == quadtree_total(2, 8)
    s2, s4, s8 = (accumulated_evaluations(ns, round(math.log(64, ns))) for ns in (2, 4, 8))
    assert s2 < s4 < s8
