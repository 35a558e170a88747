from __future__ import annotations

import numpy as np
import pytest

from flowsig.video_io import ArraySource


def flicker_frames(pattern: np.ndarray, block: int = 8, base: int = 40, amp: int = 100):
    """Frames whose motion state for block (r, c) at state t is ``pattern[t, r, c]``.

    Even frames are flat ``base``; frame 2t+1 lifts the active blocks by
    ``amp``, so both differences of the triplet exceed any T1 < amp.
    """
    L, rows, cols = pattern.shape
    flat = np.full((rows * block, cols * block), base, dtype=np.uint8)
    frames = [flat]
    for t in range(L):
        up = np.kron(pattern[t].astype(np.uint8), np.ones((block, block), np.uint8))
        frames.append((flat + amp * up).astype(np.uint8))
        frames.append(flat)
    return frames


def flicker_source(pattern: np.ndarray, **kw) -> ArraySource:
    return ArraySource(flicker_frames(pattern, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
