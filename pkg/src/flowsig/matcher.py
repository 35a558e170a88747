"""Temporal-signature matching between two videos.

Distances are Dice-style on motion bits: ``1 - 2|a & b| / (|a| + |b|)``.
Level 0 compares every candidate pair; each finer level only compares the
children of pairs matched one level up. The retention threshold is the
``1/lambda`` nearest-rank quantile of first-segment distances.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .motion_state import as_ratio
from .sequences import LevelStates, PatchGrid, StateSequence

log = logging.getLogger(__name__)

PAIR_CHUNK = 1 << 16


class NoCandidates(ValueError):
    pass


class MatchTriplet(NamedTuple):
    a: tuple[int, int, int]
    b: tuple[int, int, int]
    dist: float


@dataclass(frozen=True)
class MatchParams:
    lam: float = 6.0
    max_bad_segments: int = 1
    min_motion_frac: float = 1 / 30
    keep_one_to_many: bool = True

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lambda must be >= 1")
        if self.max_bad_segments < 1:
            raise ValueError("max_bad_segments must be >= 1")


@dataclass(frozen=True)
class HierarchyPlan:
    levels: tuple[tuple[int, int], ...] = ((64, 64), (32, 32), (16, 16), (8, 8))
    branching: int = 2

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        for (p0, _), (p1, _) in zip(self.levels, self.levels[1:]):
            if p0 != p1 * self.branching:
                raise ValueError(f"patch {p1} is not {p0}/{self.branching}")

    @classmethod
    def from_range(cls, coarse: int, fine: int, branching: int = 2, overlap: int = 1) -> "HierarchyPlan":
        """Sizes ``coarse, coarse/b, ... fine`` with ``stride = size / overlap``."""
        levels, p = [], coarse
        while p >= fine:
            levels.append((p, max(1, p // overlap)))
            p //= branching
        if levels[-1][0] != fine:
            raise ValueError(f"{fine} is not reachable from {coarse} with branching {branching}")
        return cls(tuple(levels), branching)


# ------------------------------------------------------------------ distance

def dice_distance(overlap: int, total: int) -> float:
    """``1 - 2*overlap/total`` rounded once; 1.0 when both sequences are silent."""
    if total == 0:
        return 1.0
    return (total - 2 * overlap) / total


def dice_counts(s1: StateSequence, s2: StateSequence) -> tuple[int, int]:
    if s1.length != s2.length or s1.seg_len != s2.seg_len:
        raise ValueError("sequences must be truncated to a common length first")
    overlap = int(np.bitwise_count(s1.segments & s2.segments).sum())
    return overlap, s1.popcount + s2.popcount


def sequence_distance(s1: StateSequence, s2: StateSequence) -> float:
    return dice_distance(*dice_counts(s1, s2))


class SegmentedDistance(NamedTuple):
    distance: float
    aborted: bool
    overlap: int
    total: int
    segments_evaluated: int


def segmented_distance(s1: StateSequence, s2: StateSequence, per_seg_threshold: float,
                       max_bad: int | None = 1) -> SegmentedDistance:
    """Segment-by-segment distance with early abort.

    A segment is bad when its own distance exceeds ``per_seg_threshold``.
    Segments where both sequences are silent carry no evidence and are
    never counted as bad. ``max_bad=None`` disables the abort.
    """
    if s1.length != s2.length or s1.seg_len != s2.seg_len:
        raise ValueError("sequences must share length and segment length")
    overlap = total = bad = 0
    for k in range(s1.n_segments):
        o = int(np.bitwise_count(s1.segments[k] & s2.segments[k]).sum())
        t = int(s1.ones_per_segment[k] + s2.ones_per_segment[k])
        overlap += o
        total += t
        if t and dice_distance(o, t) > per_seg_threshold:
            bad += 1
            if max_bad is not None and bad >= max_bad:
                return SegmentedDistance(1.0, True, overlap, total, k + 1)
    return SegmentedDistance(dice_distance(overlap, total), False, overlap, total, s1.n_segments)


def candidate_set(states: LevelStates, length: int | None = None,
                  min_motion_frac: float = 1 / 30) -> np.ndarray:
    """Boolean mask of patches with ``popcount >= length * min_motion_frac``."""
    length = states.length if length is None else length
    num, den = as_ratio(min_motion_frac)
    return states.totals * den >= num * length


def select_threshold(first_segment_distances, lam: float) -> float:
    """Nearest-rank ``1/lam`` quantile: the ``ceil(m/lam)``-th smallest value."""
    d = np.sort(np.asarray(first_segment_distances, dtype=float), kind="stable")
    m = d.size
    if m == 0:
        raise NoCandidates("no first-segment distances to select a threshold from")
    k = math.ceil(Fraction(m) / Fraction(lam).limit_denominator(1_000_000))
    return float(d[min(max(k, 1), m) - 1])


# ---------------------------------------------------------------- bulk pairs

def _chunks(n: int, size: int = PAIR_CHUNK):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def pair_overlaps(A: LevelStates, B: LevelStates, pa: np.ndarray, pb: np.ndarray,
                  segment: int | None = None, threads: int = 1) -> np.ndarray:
    """Popcount of ``a & b`` for each pair, on one segment or the whole sequence."""
    def work(span):
        lo, hi = span
        if segment is None:
            x = A.words[pa[lo:hi]] & B.words[pb[lo:hi]]
            return np.bitwise_count(x).sum(axis=(1, 2), dtype=np.int64)
        x = A.words[pa[lo:hi], segment] & B.words[pb[lo:hi], segment]
        return np.bitwise_count(x).sum(axis=1, dtype=np.int64)

    if len(pa) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(_map(work, _chunks(len(pa)), threads))


def pair_distances(A: LevelStates, B: LevelStates, pa, pb, threads: int = 1):
    """Full-sequence (overlap, distance) arrays for index pairs."""
    pa = np.asarray(pa, dtype=np.int64)
    pb = np.asarray(pb, dtype=np.int64)
    overlap = pair_overlaps(A, B, pa, pb, threads=threads)
    total = A.totals[pa] + B.totals[pb]
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(total > 0, (total - 2 * overlap) / np.maximum(total, 1), 1.0)
    return overlap, dist


# -------------------------------------------------------------------- levels

@dataclass
class LevelMatch:
    triplets: list[MatchTriplet]
    threshold: float | None
    evaluations: int
    aborted: int = 0


def _triplet_key(t: MatchTriplet):
    return (t.dist, t.a[1], t.a[2], t.b[1], t.b[2])


def sort_triplets(triplets) -> list[MatchTriplet]:
    return sorted(triplets, key=_triplet_key)


def match_level(A: LevelStates, B: LevelStates, params: MatchParams,
                scopes: dict[int, np.ndarray] | None = None,
                a_cands: np.ndarray | None = None, b_cands: np.ndarray | None = None,
                threads: int = 1) -> LevelMatch:
    """Match one level.

    ``scopes`` maps an A patch index to the B patch indices it may be
    compared with; ``None`` means a global search over all B candidates.
    """
    if A.length != B.length or A.seg_len != B.seg_len:
        raise ValueError("both videos must be truncated to a common length")
    if a_cands is None:
        a_cands = candidate_set(A, min_motion_frac=params.min_motion_frac)
    if b_cands is None:
        b_cands = candidate_set(B, min_motion_frac=params.min_motion_frac)

    b_all = np.flatnonzero(b_cands)
    if scopes is None:
        a_idx = np.flatnonzero(a_cands)
        pa = np.repeat(a_idx, b_all.size)
        pb = np.tile(b_all, a_idx.size)
    else:
        pas, pbs = [], []
        for a in sorted(scopes):
            if not a_cands[a]:
                continue
            bs = np.asarray(scopes[a], dtype=np.int64)
            bs = bs[b_cands[bs]]
            pas.append(np.full(bs.size, a, dtype=np.int64))
            pbs.append(bs)
        pa = np.concatenate(pas) if pas else np.zeros(0, dtype=np.int64)
        pb = np.concatenate(pbs) if pbs else np.zeros(0, dtype=np.int64)
    pa = pa.astype(np.int64, copy=False)
    pb = pb.astype(np.int64, copy=False)
    m = pa.size
    if m == 0:
        return LevelMatch([], None, 0)

    # first segment decides the threshold
    o0 = pair_overlaps(A, B, pa, pb, segment=0, threads=threads)
    t0 = A.ones[pa, 0] + B.ones[pb, 0]
    informative = t0 > 0
    d0 = np.where(informative, (t0 - 2 * o0) / np.maximum(t0, 1), 1.0)
    try:
        thr = select_threshold(d0[informative], params.lam)
    except NoCandidates:
        return LevelMatch([], None, m)

    bad = (informative & (d0 > thr)).astype(np.int64)
    alive = bad < params.max_bad_segments
    overlap, total = o0.copy(), t0.copy()
    for k in range(1, A.n_segments):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        ok = pair_overlaps(A, B, pa[idx], pb[idx], segment=k, threads=threads)
        tk = A.ones[pa[idx], k] + B.ones[pb[idx], k]
        overlap[idx] += ok
        total[idx] += tk
        dk = np.where(tk > 0, (tk - 2 * ok) / np.maximum(tk, 1), 1.0)
        bad[idx] += (tk > 0) & (dk > thr)
        alive[idx] = bad[idx] < params.max_bad_segments

    dist = np.where(total > 0, (total - 2 * overlap) / np.maximum(total, 1), 1.0)
    # zero co-motion is never a match, whatever the threshold
    keep = np.flatnonzero(alive & (dist <= thr) & (overlap > 0))
    ga, gb = A.grid, B.grid
    ar, ac = np.divmod(pa[keep], ga.cols)
    br, bc = np.divmod(pb[keep], gb.cols)
    triplets = [
        MatchTriplet((ga.level, int(r0), int(c0)), (gb.level, int(r1), int(c1)), float(d))
        for r0, c0, r1, c1, d in zip(ar, ac, br, bc, dist[keep])
    ]
    triplets = sort_triplets(triplets)
    if not params.keep_one_to_many:
        seen, best = set(), []
        for t in triplets:
            if t.a not in seen:
                seen.add(t.a)
                best.append(t)
        triplets = best
    return LevelMatch(triplets, thr, m, int((~alive).sum()))


# ----------------------------------------------------------------- hierarchy

def child_ranges(parent: PatchGrid, child: PatchGrid, dilate: int = 0):
    """Per parent index, the (row0, row1, col0, col1) child ranges whose
    centres fall inside the parent rectangle grown by ``dilate`` pixels."""
    half = child.patch_size / 2 - 0.5
    s = child.stride

    def span(lo, hi, n):
        # centre = i*s + half in [lo, hi)
        i0 = max(0, math.ceil((lo - half) / s))
        i1 = min(n, math.ceil((hi - half) / s))
        return i0, i1

    out = []
    for idx in range(parent.size):
        r, c = divmod(idx, parent.cols)
        x0, y0, x1, y1 = parent.rect(r, c)
        r0, r1 = span(y0 - dilate, y1 + dilate, child.rows)
        c0, c1 = span(x0 - dilate, x1 + dilate, child.cols)
        out.append((r0, r1, c0, c1))
    return out


def _range_indices(rng, cols):
    r0, r1, c0, c1 = rng
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    return (rr * cols + cc).ravel()


def child_scopes(parents: list[MatchTriplet], pa_grid: PatchGrid, pb_grid: PatchGrid,
                 ca_grid: PatchGrid, cb_grid: PatchGrid) -> dict[int, np.ndarray]:
    """Search scopes for the next level: each A child of a matched parent pair
    is compared with the B children of that pair's B parent."""
    dilate = cb_grid.stride if cb_grid.stride < cb_grid.patch_size else 0
    a_ranges = child_ranges(pa_grid, ca_grid)
    b_ranges = child_ranges(pb_grid, cb_grid, dilate)
    collected: dict[int, list[np.ndarray]] = {}
    b_cache: dict[int, np.ndarray] = {}
    for t in parents:
        ia = pa_grid.index(t.a[1], t.a[2])
        ib = pb_grid.index(t.b[1], t.b[2])
        if ib not in b_cache:
            b_cache[ib] = _range_indices(b_ranges[ib], cb_grid.cols)
        for ca in _range_indices(a_ranges[ia], ca_grid.cols):
            collected.setdefault(int(ca), []).append(b_cache[ib])
    return {a: np.unique(np.concatenate(v)) for a, v in collected.items()}


@dataclass
class LevelResult:
    level: int
    grid_a: PatchGrid
    grid_b: PatchGrid
    matched: list[MatchTriplet]
    triplets: list[MatchTriplet]
    threshold: float | None
    evaluations: int
    match_time: float = 0.0
    refine_time: float = 0.0
    stats: dict = field(default_factory=dict)


RefineHook = Callable[[int, LevelMatch, LevelStates, LevelStates, np.ndarray, np.ndarray],
                      list[MatchTriplet]]


def run_hierarchy(A_levels: list[LevelStates], B_levels: list[LevelStates],
                  plan: HierarchyPlan, params: MatchParams,
                  refine: RefineHook | None = None, threads: int = 1) -> list[LevelResult]:
    """Coarse-to-fine matching. ``refine`` (if given) post-processes each
    level's matches; its output, not the raw matcher triplets, is what the
    next level subdivides."""
    if len(A_levels) != len(plan.levels) or len(B_levels) != len(plan.levels):
        raise ValueError("state levels do not match the hierarchy plan")
    results: list[LevelResult] = []
    parents: list[MatchTriplet] | None = None
    for i, (A, B) in enumerate(zip(A_levels, B_levels)):
        length = min(A.length, B.length)
        A, B = A.truncate(length), B.truncate(length)
        a_c = candidate_set(A, length, params.min_motion_frac)
        b_c = candidate_set(B, length, params.min_motion_frac)
        t0 = time.perf_counter()
        if i == 0:
            scopes = None
        else:
            prev = results[-1]
            scopes = child_scopes(parents, prev.grid_a, prev.grid_b, A.grid, B.grid)
        lm = match_level(A, B, params, scopes, a_c, b_c, threads=threads)
        t1 = time.perf_counter()
        out = refine(i, lm, A, B, a_c, b_c) if refine is not None else lm.triplets
        t2 = time.perf_counter()
        results.append(LevelResult(i, A.grid, B.grid, lm.triplets, out, lm.threshold,
                                   lm.evaluations, t1 - t0, t2 - t1,
                                   {"aborted": lm.aborted,
                                    "a_candidates": int(a_c.sum()),
                                    "b_candidates": int(b_c.sum())}))
        log.info("level %d (patch %d): %d evaluations, %d matched, %d after refine",
                 i, A.grid.patch_size, lm.evaluations, len(lm.triplets), len(out))
        parents = out
    return results


# ------------------------------------------------- quadtree evaluation counts

def round_evaluations(ns: int, t: int) -> int:
    """Pair evaluations in round ``t`` of a fully matched ``ns``-ary quadtree."""
    return ns ** (2 * t + 2)


def accumulated_evaluations(ns: int, t: int) -> int:
    return sum(round_evaluations(ns, k) for k in range(1, t + 1))


def quadtree_total(ns: int, N: int) -> Fraction:
    """Closed form ``ns^4 / (ns^2 - 1) * (N^2 - 1)``."""
    return Fraction(ns ** 4, ns ** 2 - 1) * (N * N - 1)
