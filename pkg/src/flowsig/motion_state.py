"""Per-patch binary motion states from three-frame differencing.

State ``t`` is built from frames ``2t, 2t+1, 2t+2``. A pixel moves when
both consecutive absolute differences exceed ``T1``; a patch moves when
its motion-pixel count strictly exceeds a fraction of its area. Counts
come from one integral image per state, and coarse levels that tile the
finest level exactly are summed from their children.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .sequences import LevelStates, PatchGrid
from .video_io import DimensionMismatch, Frame, FrameSource

log = logging.getLogger(__name__)


def as_ratio(frac) -> tuple[int, int]:
    """Exact (numerator, denominator) for a configured fraction such as 1/6."""
    f = Fraction(frac).limit_denominator(1_000_000)
    return f.numerator, f.denominator


@dataclass(frozen=True)
class Thresholds:
    T1: int = 4
    T2_frac: float = 1 / 6
    T3_frac: float = 1 / 6
    seg_len: int = 500
    min_motion_frac: float = 1 / 30

    def __post_init__(self):
        if self.T1 < 1:
            raise ValueError("T1 must be >= 1")
        for name in ("T2_frac", "T3_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.seg_len < 1:
            raise ValueError("seg_len must be >= 1")
        if not 0 <= self.min_motion_frac < 1:
            raise ValueError("min_motion_frac must be in [0, 1)")


@dataclass(frozen=True)
class MotionMask:
    state_index: int
    width: int
    height: int
    bits: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CountGrid:
    state_index: int
    level: int
    patch_size: int
    stride: int
    counts: np.ndarray = field(repr=False)


def motion_mask(prev: Frame, mid: Frame, next: Frame, T1: int, state_index: int = 0) -> MotionMask:
    if not (prev.data.shape == mid.data.shape == next.data.shape):
        raise DimensionMismatch("frame triplet has mismatched dimensions")
    return MotionMask(state_index, mid.width, mid.height,
                      _mask(prev.data, mid.data, next.data, T1))


def _mask(a: np.ndarray, b: np.ndarray, c: np.ndarray, T1: int) -> np.ndarray:
    a = a.astype(np.int16)
    b = b.astype(np.int16)
    c = c.astype(np.int16)
    return (np.abs(b - a) > T1) & (np.abs(c - b) > T1)


def integral_image(bits: np.ndarray) -> np.ndarray:
    """Zero-padded summed-area table: ``ii[y, x]`` = sum of ``bits[:y, :x]``."""
    h, w = bits.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int32)
    np.cumsum(bits, axis=0, dtype=np.int32, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii


def _rect_sums(ii: np.ndarray, patch: int, stride: int, rows: int, cols: int) -> np.ndarray:
    y0 = np.arange(rows) * stride
    x0 = np.arange(cols) * stride
    y1, x1 = y0 + patch, x0 + patch
    return (ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)]
            - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)])


def count_patches(mask: MotionMask, patch_size: int, stride: int, level: int = 0) -> CountGrid:
    h, w = mask.bits.shape
    if patch_size > min(w, h):
        raise ValueError(f"patch {patch_size} larger than mask {w}x{h}")
    if not 1 <= stride <= patch_size:
        raise ValueError(f"stride {stride} outside [1, {patch_size}]")
    rows = (h - patch_size) // stride + 1
    cols = (w - patch_size) // stride + 1
    counts = _rect_sums(integral_image(mask.bits), patch_size, stride, rows, cols)
    return CountGrid(mask.state_index, level, patch_size, stride, counts)


def patch_state(count, patch_area: int, frac) -> int:
    """1 iff ``count > frac * patch_area`` (strict)."""
    if not 0 <= count <= patch_area:
        raise ValueError(f"count {count} outside [0, {patch_area}]")
    num, den = as_ratio(frac)
    return int(count * den > num * patch_area)


def cropped_size(width: int, height: int, coarsest_patch: int) -> tuple[int, int]:
    """Largest multiple of the coarsest patch that fits (crop bottom/right)."""
    w = (width // coarsest_patch) * coarsest_patch
    h = (height // coarsest_patch) * coarsest_patch
    if w == 0 or h == 0:
        raise ValueError(f"image {width}x{height} smaller than patch {coarsest_patch}")
    return w, h


def level_grids(width: int, height: int, levels) -> list[PatchGrid]:
    w, h = cropped_size(width, height, levels[0][0])
    return [PatchGrid(i, p, s, w, h) for i, (p, s) in enumerate(levels)]


def sequence_length(frame_count: int, max_states: int | None = None) -> int:
    n = (frame_count - 1) // 2
    return n if max_states is None else min(n, max_states)


class StateBuilder:
    """Accumulates per-level states one mask at a time."""

    def __init__(self, grids: list[PatchGrid], th: Thresholds, length: int):
        self.grids = grids
        self.th = th
        self.length = length
        self.bits = [np.zeros((g.size, length), dtype=bool) for g in grids]
        fine = grids[-1]
        self._fine = len(grids) - 1
        self._derived = {}
        for i, g in enumerate(grids[:-1]):
            if (g.stride == g.patch_size and fine.stride == fine.patch_size
                    and g.patch_size % fine.patch_size == 0):
                self._derived[i] = g.patch_size // fine.patch_size
        self._ratios = [as_ratio(th.T2_frac if i == self._fine else th.T3_frac)
                        for i in range(len(grids))]

    def level_counts(self, mask_bits: np.ndarray) -> list[np.ndarray]:
        ii = integral_image(mask_bits)
        fine = self.grids[-1]
        fine_counts = _rect_sums(ii, fine.patch_size, fine.stride, fine.rows, fine.cols)
        out = []
        for i, g in enumerate(self.grids):
            if i == self._fine:
                out.append(fine_counts)
            elif i in self._derived:
                k = self._derived[i]
                out.append(fine_counts.reshape(g.rows, k, g.cols, k).sum(axis=(1, 3)))
            else:
                out.append(_rect_sums(ii, g.patch_size, g.stride, g.rows, g.cols))
        return out

    def add(self, t: int, mask_bits: np.ndarray) -> None:
        for i, (g, counts) in enumerate(zip(self.grids, self.level_counts(mask_bits))):
            num, den = self._ratios[i]
            self.bits[i][:, t] = (counts.ravel() * den > num * g.area)

    def finish(self) -> list[LevelStates]:
        return [LevelStates.from_bits(g, b, self.th.seg_len) for g, b in zip(self.grids, self.bits)]


def build_sequences(src: FrameSource, levels, th: Thresholds | None = None,
                    max_states: int | None = None) -> list[LevelStates]:
    """Stream ``src`` once and return one :class:`LevelStates` per level.

    ``levels`` is a coarse-to-fine list of ``(patch_size, stride)``.
    """
    th = th or Thresholds()
    if max_states is not None and max_states < 1:
        raise ValueError("max_states must be >= 1")
    sizes = [p for p, _ in levels]
    if sizes != sorted(sizes, reverse=True):
        raise ValueError("levels must be ordered coarse to fine")
    grids = level_grids(src.width, src.height, levels)
    w, h = grids[0].width, grids[0].height
    length = sequence_length(src.frame_count, max_states)
    builder = StateBuilder(grids, th, length)

    prev = src.read_frame(0).data[:h, :w]
    for t in range(length):
        mid = src.read_frame(2 * t + 1).data[:h, :w]
        nxt = src.read_frame(2 * t + 2).data[:h, :w]
        builder.add(t, _mask(prev, mid, nxt, th.T1))
        prev = nxt
    log.debug("built %d states on %dx%d, %d levels", length, w, h, len(grids))
    return builder.finish()
