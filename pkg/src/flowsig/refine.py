"""Random search and neighbour propagation over a per-level match map.

Both steps are Jacobi style: every decision in a round reads the map as it
was at the start of that round, and random offsets come from a generator
keyed on (seed, level, patch, round). Results therefore do not depend on
traversal order or thread scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matcher import MatchTriplet, pair_distances, sort_triplets
from .sequences import LevelStates

# stencils in (drow, dcol)
NEIGHBOURS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
NEIGHBOURS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class RefineParams:
    iterations: int = 3
    alpha: float = 0.5
    w0: float | None = None
    trials_per_level: int = 1
    connectivity: int = 8

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.trials_per_level < 1:
            raise ValueError("trials_per_level must be >= 1")


@dataclass
class MatchMap:
    """Best B patch per A patch, keyed by flat grid index."""

    level: int
    entries: dict[int, tuple[int, float]] = field(default_factory=dict)
    rng_seed: int = 0

    def copy(self) -> "MatchMap":
        return MatchMap(self.level, dict(self.entries), self.rng_seed)

    def __len__(self):
        return len(self.entries)

    def to_triplets(self, A: LevelStates, B: LevelStates) -> list[MatchTriplet]:
        ga, gb = A.grid, B.grid
        out = []
        for a, (b, d) in self.entries.items():
            ar, ac = divmod(a, ga.cols)
            br, bc = divmod(b, gb.cols)
            out.append(MatchTriplet((ga.level, ar, ac), (gb.level, br, bc), float(d)))
        return sort_triplets(out)

    @classmethod
    def from_triplets(cls, triplets, A: LevelStates, B: LevelStates, level: int,
                      seed: int = 0) -> "MatchMap":
        """Seed with the best (first after sorting) triplet per A patch."""
        mm = cls(level, {}, seed)
        for t in sort_triplets(triplets):
            a = A.grid.index(t.a[1], t.a[2])
            if a not in mm.entries:
                mm.entries[a] = (B.grid.index(t.b[1], t.b[2]), float(t.dist))
        return mm


def search_radii(w0: float, alpha: float) -> list[float]:
    """``w0 * alpha**i`` for i = 0, 1, ... while the radius is at least one patch."""
    radii, r = [], float(w0)
    while r >= 1:
        radii.append(r)
        r *= alpha
    return radii


def patch_rng(seed: int, level: int, patch: int, round_: int) -> np.random.Generator:
    return np.random.default_rng([seed, level, patch, round_])


def random_search(mm: MatchMap, A: LevelStates, B: LevelStates, params: RefineParams,
                  b_cands: np.ndarray | None = None, round_: int = 0,
                  threads: int = 1) -> MatchMap:
    """Try offsets ``round(w0 * alpha**i * R)``, ``R ~ U[-1, 1]^2``, around each
    current match and keep strictly better candidates."""
    if not mm.entries:
        return mm.copy()
    gb = B.grid
    w0 = params.w0 if params.w0 is not None else max(gb.rows, gb.cols)
    radii = np.repeat(search_radii(w0, params.alpha), params.trials_per_level)
    if radii.size == 0:
        return mm.copy()

    keys = sorted(mm.entries)
    pa, pb, owner = [], [], []
    for k, a in enumerate(keys):
        b, _ = mm.entries[a]
        br, bc = divmod(b, gb.cols)
        R = patch_rng(mm.rng_seed, mm.level, a, round_).uniform(-1.0, 1.0, size=(radii.size, 2))
        off = np.rint(radii[:, None] * R).astype(np.int64)
        rr, cc = br + off[:, 0], bc + off[:, 1]
        ok = (rr >= 0) & (rr < gb.rows) & (cc >= 0) & (cc < gb.cols)
        cand = rr[ok] * gb.cols + cc[ok]
        if b_cands is not None:
            cand = cand[b_cands[cand]]
        cand = cand[cand != b]
        pa.append(np.full(cand.size, a, dtype=np.int64))
        pb.append(cand)
        owner.append(np.full(cand.size, k, dtype=np.int64))

    out = mm.copy()
    if not pa:
        return out
    pa, pb, owner = np.concatenate(pa), np.concatenate(pb), np.concatenate(owner)
    if pa.size == 0:
        return out
    overlap, dist = pair_distances(A, B, pa, pb, threads=threads)
    for i in range(pa.size):
        a = keys[owner[i]]
        if overlap[i] > 0 and dist[i] < out.entries[a][1]:
            out.entries[a] = (int(pb[i]), float(dist[i]))
    return out


def propagate(mm: MatchMap, A: LevelStates, B: LevelStates, threshold: float,
              a_cands: np.ndarray | None = None, b_cands: np.ndarray | None = None,
              threads: int = 1, connectivity: int = 8) -> MatchMap:
    """One snapshot round: each A patch tries its neighbours' matches shifted
    back by the neighbour offset and adopts the best one that beats its
    current distance and stays within ``threshold``."""
    if not mm.entries:
        return mm.copy()
    ga, gb = A.grid, B.grid
    snap_b = np.full(ga.size, -1, dtype=np.int64)
    snap_d = np.full(ga.size, np.inf)
    for a, (b, d) in mm.entries.items():
        snap_b[a], snap_d[a] = b, d

    pa_all, pb_all = [], []
    rows, cols = np.divmod(np.arange(ga.size), ga.cols)
    stencil = NEIGHBOURS_8 if connectivity == 8 else NEIGHBOURS_4
    for dr, dc in stencil:
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < ga.rows) & (nc >= 0) & (nc < ga.cols)
        p = np.flatnonzero(inside)
        q = nr[p] * ga.cols + nc[p]
        has = snap_b[q] >= 0
        p, q = p[has], q[has]
        br, bc = np.divmod(snap_b[q], gb.cols)
        br, bc = br - dr, bc - dc
        ok = (br >= 0) & (br < gb.rows) & (bc >= 0) & (bc < gb.cols)
        p, b = p[ok], (br * gb.cols + bc)[ok]
        if a_cands is not None:
            keep = a_cands[p]
            p, b = p[keep], b[keep]
        if b_cands is not None:
            keep = b_cands[b]
            p, b = p[keep], b[keep]
        keep = snap_b[p] != b
        pa_all.append(p[keep])
        pb_all.append(b[keep])

    pa = np.concatenate(pa_all)
    pb = np.concatenate(pb_all)
    out = mm.copy()
    if pa.size == 0:
        return out
    # one test per distinct (a, b) proposal
    pairs = np.unique(np.stack([pa, pb], axis=1), axis=0)
    pa, pb = pairs[:, 0], pairs[:, 1]
    overlap, dist = pair_distances(A, B, pa, pb, threads=threads)
    good = (overlap > 0) & (dist <= threshold) & (dist < snap_d[pa])
    pa, pb, dist = pa[good], pb[good], dist[good]
    # best per A: lowest distance, then lowest B index
    order = np.lexsort((pb, dist, pa))
    pa, pb, dist = pa[order], pb[order], dist[order]
    first = np.ones(pa.size, dtype=bool)
    first[1:] = pa[1:] != pa[:-1]
    for a, b, d in zip(pa[first], pb[first], dist[first]):
        out.entries[int(a)] = (int(b), float(d))
    return out


def refine_level(triplets, A: LevelStates, B: LevelStates, params: RefineParams,
                 threshold: float | None, a_cands: np.ndarray | None = None,
                 b_cands: np.ndarray | None = None, seed: int = 0, level: int | None = None,
                 threads: int = 1, history: list | None = None) -> list[MatchTriplet]:
    """Random search then ``params.iterations`` propagation rounds.

    Returns the refined best-per-A map as triplets sorted by distance. When
    ``history`` is a list, the map size after random search and after each
    propagation round is appended to it.
    """
    level = A.grid.level if level is None else level
    mm = MatchMap.from_triplets(triplets, A, B, level, seed)
    if not mm.entries:
        if history is not None:
            history.extend([0] * (params.iterations + 1))
        return []
    mm = random_search(mm, A, B, params, b_cands, round_=0, threads=threads)
    if history is not None:
        history.append(len(mm))
    for it in range(params.iterations):
        if threshold is None:
            break
        mm = propagate(mm, A, B, threshold, a_cands, b_cands, threads=threads,
                       connectivity=params.connectivity)
        if history is not None:
            history.append(len(mm))
    return mm.to_triplets(A, B)
