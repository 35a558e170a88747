"""Bit-packed motion-state sequences.

Each sequence is cut into segments of ``seg_len`` states. A segment is
stored in its own run of 64-bit words (zero padded), so per-segment
popcounts of ``a & b`` reduce to a word-block sum. Bit ``j`` of segment
``k`` holds state ``k * seg_len + j``; inside a word the least significant
bit comes first.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64


def words_per_segment(seg_len: int) -> int:
    return -(-seg_len // WORD_BITS)


def n_segments(length: int, seg_len: int) -> int:
    return max(1, -(-length // seg_len))


def pack_states(bits: np.ndarray, seg_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Pack a ``(n, L)`` boolean matrix.

    Returns ``words`` shaped ``(n, n_seg, wps)`` (uint64) and the per-segment
    popcounts shaped ``(n, n_seg)``.
    """
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim == 1:
        bits = bits[None, :]
    n, length = bits.shape
    nseg = n_segments(length, seg_len)
    wps = words_per_segment(seg_len)
    padded = np.zeros((n, nseg * seg_len), dtype=bool)
    padded[:, :length] = bits
    padded = padded.reshape(n, nseg, seg_len)
    if wps * WORD_BITS != seg_len:
        padded = np.concatenate(
            [padded, np.zeros((n, nseg, wps * WORD_BITS - seg_len), dtype=bool)], axis=2
        )
    packed = np.packbits(padded, axis=2, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)
    ones = np.bitwise_count(words).sum(axis=2, dtype=np.int64)
    return words, ones


def unpack_states(words: np.ndarray, length: int, seg_len: int) -> np.ndarray:
    """Inverse of :func:`pack_states` for a ``(n, n_seg, wps)`` word array."""
    n, nseg, wps = words.shape
    as_bytes = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(as_bytes.reshape(n, nseg, wps * 8), axis=2, bitorder="little")
    bits = bits[:, :, :seg_len].reshape(n, nseg * seg_len)
    return bits[:, :length].astype(bool)


@dataclass(frozen=True)
class StateSequence:
    patch_id: tuple[int, int, int]
    length: int
    seg_len: int
    segments: np.ndarray = field(repr=False)
    ones_per_segment: np.ndarray = field(repr=False)

    @classmethod
    def from_bits(cls, bits, seg_len: int, patch_id=(0, 0, 0)) -> "StateSequence":
        bits = np.asarray(bits, dtype=bool).ravel()
        words, ones = pack_states(bits[None, :], seg_len)
        return cls(tuple(patch_id), int(bits.size), seg_len, words[0], ones[0])

    @property
    def popcount(self) -> int:
        return int(self.ones_per_segment.sum())

    @property
    def n_segments(self) -> int:
        return self.segments.shape[0]

    def to_bits(self) -> np.ndarray:
        return unpack_states(self.segments[None], self.length, self.seg_len)[0]

    def truncate(self, length: int) -> "StateSequence":
        if length >= self.length:
            return self
        return StateSequence.from_bits(self.to_bits()[:length], self.seg_len, self.patch_id)


@dataclass(frozen=True)
class PatchGrid:
    """Patch layout of one hierarchy level on one (cropped) video."""

    level: int
    patch_size: int
    stride: int
    width: int
    height: int

    def __post_init__(self):
        if self.patch_size > min(self.width, self.height):
            raise ValueError(f"patch {self.patch_size} larger than image {self.width}x{self.height}")
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError(f"stride {self.stride} outside [1, {self.patch_size}]")

    @property
    def rows(self) -> int:
        return (self.height - self.patch_size) // self.stride + 1

    @property
    def cols(self) -> int:
        return (self.width - self.patch_size) // self.stride + 1

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def area(self) -> int:
        return self.patch_size * self.patch_size

    def index(self, row, col):
        return row * self.cols + col

    def rowcol(self, idx):
        return np.divmod(idx, self.cols) if isinstance(idx, np.ndarray) else divmod(int(idx), self.cols)

    def origin(self, row, col):
        return col * self.stride, row * self.stride

    def center(self, row, col):
        """Continuous pixel coordinates of the patch centre (pixel centres at integers)."""
        half = self.patch_size / 2 - 0.5
        return col * self.stride + half, row * self.stride + half

    def centers(self) -> np.ndarray:
        """``(size, 2)`` array of (x, y) centres in flat index order."""
        rows, cols = np.divmod(np.arange(self.size), self.cols)
        half = self.patch_size / 2 - 0.5
        return np.stack([cols * self.stride + half, rows * self.stride + half], axis=1)

    def rect(self, row, col):
        x0, y0 = self.origin(row, col)
        return x0, y0, x0 + self.patch_size, y0 + self.patch_size


@dataclass
class LevelStates:
    """All state sequences of one hierarchy level of one video."""

    grid: PatchGrid
    length: int
    seg_len: int
    words: np.ndarray = field(repr=False)
    ones: np.ndarray = field(repr=False)

    @classmethod
    def from_bits(cls, grid: PatchGrid, bits: np.ndarray, seg_len: int) -> "LevelStates":
        bits = np.asarray(bits, dtype=bool)
        if bits.shape[0] != grid.size:
            raise ValueError(f"{bits.shape[0]} sequences for a grid of {grid.size} patches")
        words, ones = pack_states(bits, seg_len)
        return cls(grid, bits.shape[1], seg_len, words, ones)

    @property
    def totals(self) -> np.ndarray:
        return self.ones.sum(axis=1)

    @property
    def n_segments(self) -> int:
        return self.words.shape[1]

    def sequence(self, idx: int) -> StateSequence:
        r, c = self.grid.rowcol(idx)
        return StateSequence(
            (self.grid.level, int(r), int(c)), self.length, self.seg_len,
            self.words[idx], self.ones[idx],
        )

    def bits(self) -> np.ndarray:
        return unpack_states(self.words, self.length, self.seg_len)

    def truncate(self, length: int) -> "LevelStates":
        if length >= self.length:
            return self
        return LevelStates.from_bits(self.grid, self.bits()[:, :length], self.seg_len)


# ---------------------------------------------------------------- cache file

CACHE_MAGIC = b"FLSQ"
CACHE_VERSION = 1
_HEAD = struct.Struct("<4sHHII")
_LEVEL = struct.Struct("<IIIIII")


def save_states(path: str, levels: list[LevelStates]) -> None:
    """Write ``states.bin``: header, then each level's sequences row-major.

    Sequences are stored contiguously (no segment padding) as
    ``ceil(L / 64)`` little-endian words, bit ``i`` = state ``i``.
    """
    if not levels:
        raise ValueError("nothing to save")
    length, seg_len = levels[0].length, levels[0].seg_len
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(CACHE_MAGIC, CACHE_VERSION, len(levels), length, seg_len))
        for lv in levels:
            g = lv.grid
            fh.write(_LEVEL.pack(g.patch_size, g.stride, g.rows, g.cols, g.width, g.height))
        for lv in levels:
            if (lv.length, lv.seg_len) != (length, seg_len):
                raise ValueError("all levels must share length and seg_len")
            flat, _ = pack_states(lv.bits(), max(length, 1))
            fh.write(flat.reshape(lv.grid.size, -1).astype("<u8").tobytes())


def load_states(path: str) -> list[LevelStates]:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, nlev, length, seg_len = _HEAD.unpack_from(blob, 0)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = _HEAD.size
    grids = []
    for lvl in range(nlev):
        ps, st, rows, cols, w, h = _LEVEL.unpack_from(blob, off)
        off += _LEVEL.size
        g = PatchGrid(lvl, ps, st, w, h)
        if (g.rows, g.cols) != (rows, cols):
            raise ValueError(f"{path}: inconsistent grid header at level {lvl}")
        grids.append(g)
    wpseq = words_per_segment(max(length, 1))
    out = []
    for g in grids:
        nbytes = g.size * wpseq * 8
        words = np.frombuffer(blob, dtype="<u8", count=g.size * wpseq, offset=off)
        off += nbytes
        bits = unpack_states(words.reshape(g.size, 1, wpseq).astype(np.uint64), length, max(length, 1))
        out.append(LevelStates.from_bits(g, bits, seg_len))
    return out
