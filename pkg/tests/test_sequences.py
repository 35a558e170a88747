from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flowsig.motion_state import Thresholds, build_sequences
from flowsig.sequences import (LevelStates, PatchGrid, StateSequence, load_states, pack_states,
                               save_states, unpack_states)

from conftest import flicker_source


@settings(max_examples=80)
@given(st.integers(1, 300).flatmap(lambda n: hnp.arrays(bool, n)), st.integers(1, 130))
def test_pack_roundtrip_and_popcounts(bits, seg_len):
    s = StateSequence.from_bits(bits, seg_len)
    np.testing.assert_array_equal(s.to_bits(), bits)
    # segments cover the sequence; only the last one may be short
    sizes = [min(seg_len, bits.size - k * seg_len) for k in range(s.n_segments)]
    assert sum(sizes) == bits.size and all(x == seg_len for x in sizes[:-1])
    for k in range(s.n_segments):
        assert s.ones_per_segment[k] == bits[k * seg_len:(k + 1) * seg_len].sum()
    assert s.popcount == bits.sum()


def test_bit_order_is_little_within_words():
    bits = np.zeros(70, bool)
    bits[[0, 3, 64]] = True
    words, _ = pack_states(bits[None], 128)
    assert words[0, 0, 0] == 0b1001 and words[0, 0, 1] == 1


def test_unpack_inverts_pack(rng):
    bits = rng.random((5, 1234)) < 0.3
    words, ones = pack_states(bits, 500)
    assert words.shape == (5, 3, 8) and ones.shape == (5, 3)
    np.testing.assert_array_equal(unpack_states(words, 1234, 500), bits)


def test_truncate(rng):
    bits = rng.random(900) < 0.5
    s = StateSequence.from_bits(bits, 500).truncate(600)
    assert s.length == 600
    np.testing.assert_array_equal(s.to_bits(), bits[:600])


@pytest.mark.parametrize("P, S, W, H, rows, cols", [
    (8, 8, 64, 48, 6, 8), (16, 8, 64, 48, 5, 7), (64, 64, 640, 480, 7, 10),
])
def test_grid_geometry(P, S, W, H, rows, cols):
    g = PatchGrid(0, P, S, W, H)
    assert (g.rows, g.cols) == (rows, cols)
    assert g.center(0, 0) == (P / 2 - 0.5, P / 2 - 0.5)
    r, c = rows - 1, cols - 1
    x0, y0, x1, y1 = g.rect(r, c)
    assert x1 <= W and y1 <= H and g.index(r, c) == g.size - 1
    assert tuple(g.centers()[g.index(r, c)]) == g.center(r, c)


def test_grid_validation():
    with pytest.raises(ValueError):
        PatchGrid(0, 16, 8, 8, 8)
    with pytest.raises(ValueError):
        PatchGrid(0, 8, 9, 64, 64)


def test_level_sequence_ids(rng):
    g = PatchGrid(2, 8, 8, 32, 16)
    lv = LevelStates.from_bits(g, rng.random((g.size, 40)) < 0.5, 16)
    s = lv.sequence(g.index(1, 3))
    assert s.patch_id == (2, 1, 3)
    np.testing.assert_array_equal(s.to_bits(), lv.bits()[g.index(1, 3)])


@pytest.mark.parametrize("L, seg_len", [(30, 7), (64, 500), (130, 64)])
def test_cache_roundtrip(tmp_path, rng, L, seg_len):
    pattern = rng.random((L, 4, 8)) < 0.4
    states = build_sequences(flicker_source(pattern), [(16, 16), (8, 8)], Thresholds(seg_len=seg_len))
    path = tmp_path / "states.bin"
    save_states(str(path), states)
    blob = path.read_bytes()
    assert blob[:4] == b"FLSQ"
    back = load_states(str(path))
    for a, b in zip(states, back):
        assert a.grid == b.grid and a.length == b.length and a.seg_len == b.seg_len
        np.testing.assert_array_equal(a.bits(), b.bits())
        np.testing.assert_array_equal(a.ones, b.ones)


def test_cache_body_layout(tmp_path):
    g = PatchGrid(0, 8, 8, 16, 8)
    bits = np.zeros((2, 70), bool)
    bits[1, [0, 65]] = True
    save_states(str(tmp_path / "s.bin"), [LevelStates.from_bits(g, bits, 500)])
    body = np.frombuffer((tmp_path / "s.bin").read_bytes()[-32:], "<u8")
    # two sequences of ceil(70/64) = 2 words each, row-major
    np.testing.assert_array_equal(body, [0, 0, 1, 2])


def test_cache_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(ValueError):
        load_states(str(p))
