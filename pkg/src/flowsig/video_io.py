"""Frame-directory ingestion.

A video is a directory of ``NNNNNN.<ext>`` raster files (PGM/PPM/PNG and
anything else Pillow decodes) plus an optional ``video.meta`` sidecar.
Frames are decoded lazily so only the three-frame window needed by the
motion-state builder is ever resident.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Iterator, Protocol

import numpy as np
from PIL import Image, UnidentifiedImageError

SUPPORTED_EXTENSIONS = (".pgm", ".ppm", ".pnm", ".png", ".bmp", ".tif", ".tiff")
DEFAULT_FPS = 30.0
MIN_FRAMES = 3

_FRAME_NAME = re.compile(r"^(\d{6})(\.[A-Za-z]+)$")


class VideoError(Exception):
    """Base class for ingestion failures."""


class MissingDirectory(VideoError):
    pass


class TooFewFrames(VideoError):
    pass


class DimensionMismatch(VideoError):
    pass


class DecodeError(VideoError):
    pass


class FrameIndexError(VideoError, IndexError):
    pass


@dataclass(frozen=True)
class Frame:
    index: int
    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"frame {self.index}: data shape {self.data.shape} != {(self.height, self.width)}"
            )
        if self.data.dtype != np.uint8:
            raise ValueError("frame data must be uint8")
        self.data.setflags(write=False)


class FrameSource(Protocol):
    """Anything the motion-state builder can stream frames from."""

    width: int
    height: int
    frame_count: int

    def read_frame(self, index: int) -> Frame: ...


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luminance ``0.299R + 0.587G + 0.114B`` rounded to the nearest integer."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8, copy=False)
    # integer weights keep the rounding exact: (299R + 587G + 114B + 500) // 1000
    r = rgb[..., 0].astype(np.int32)
    g = rgb[..., 1].astype(np.int32)
    b = rgb[..., 2].astype(np.int32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def _decode(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im)
            elif im.mode in ("RGB", "RGBA", "P", "1", "LA", "CMYK", "YCbCr"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise DecodeError(f"{path}: unsupported pixel mode {im.mode}")
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return rgb_to_gray(arr)


def _read_meta(path: str) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def _image_size(path: str) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


@dataclass
class VideoSource:
    path: str
    frame_count: int
    fps: float
    width: int
    height: int
    files: list[str] = field(repr=False)

    def read_frame(self, index: int) -> Frame:
        return read_frame(self, index)

    def __iter__(self) -> Iterator[Frame]:
        for i in range(self.frame_count):
            yield self.read_frame(i)


def open_video(path: str, check_all: bool = True) -> VideoSource:
    """Scan a frame directory.

    Indices must be contiguous from 0. With ``check_all`` every frame header
    is read to validate dimensions up front; otherwise only frame 0 is
    inspected and later mismatches surface in :func:`read_frame`.
    """
    if not os.path.isdir(path):
        raise MissingDirectory(f"no such frame directory: {path}")

    indexed = {}
    for name in os.listdir(path):
        m = _FRAME_NAME.match(name)
        if not m or m.group(2).lower() not in SUPPORTED_EXTENSIONS:
            continue
        idx = int(m.group(1))
        if idx in indexed:
            raise VideoError(f"duplicate frame index {idx} in {path}")
        indexed[idx] = os.path.join(path, name)

    meta_path = os.path.join(path, "video.meta")
    meta = _read_meta(meta_path) if os.path.exists(meta_path) else {}
    fps = float(meta.get("fps", DEFAULT_FPS))

    count = len(indexed)
    if sorted(indexed) != list(range(count)):
        raise VideoError(f"frame indices in {path} are not contiguous from 0")
    if "frames" in meta and int(meta["frames"]) != count:
        raise VideoError(f"video.meta says {meta['frames']} frames, found {count}")
    if count < MIN_FRAMES:
        raise TooFewFrames(f"{path}: {count} frames, need at least {MIN_FRAMES}")

    files = [indexed[i] for i in range(count)]
    width, height = _image_size(files[0])
    if check_all:
        for f in files[1:]:
            if _image_size(f) != (width, height):
                raise DimensionMismatch(f"{f}: size {_image_size(f)} != {(width, height)}")
    return VideoSource(path, count, fps, width, height, files)


def read_frame(src: VideoSource, index: int) -> Frame:
    if not 0 <= index < src.frame_count:
        raise FrameIndexError(f"frame {index} out of range [0, {src.frame_count})")
    data = _decode(src.files[index])
    if data.shape != (src.height, src.width):
        raise DimensionMismatch(
            f"{src.files[index]}: size {data.shape[::-1]} != {(src.width, src.height)}"
        )
    return Frame(index, src.width, src.height, data)


class ArraySource:
    """In-memory frame source, mostly for tests and synthetic pipelines."""

    def __init__(self, frames, fps: float = DEFAULT_FPS):
        frames = [np.ascontiguousarray(f, dtype=np.uint8) for f in frames]
        if len(frames) < MIN_FRAMES:
            raise TooFewFrames(f"{len(frames)} frames, need at least {MIN_FRAMES}")
        self.height, self.width = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != (self.height, self.width):
                raise DimensionMismatch(f"frame {i}: shape {f.shape} != {frames[0].shape}")
        self._frames = frames
        self.frame_count = len(frames)
        self.fps = fps

    def read_frame(self, index: int) -> Frame:
        if not 0 <= index < self.frame_count:
            raise FrameIndexError(f"frame {index} out of range [0, {self.frame_count})")
        return Frame(index, self.width, self.height, self._frames[index])


def iter_frames(src: FrameSource, start: int = 0, stop: int | None = None) -> Iterator[Frame]:
    stop = src.frame_count if stop is None else min(stop, src.frame_count)
    for i in range(start, stop):
        yield src.read_frame(i)


def write_pgm(path: str, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype=np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def write_video(src: FrameSource, out_dir: str, ext: str = ".pgm", fps: float | None = None) -> str:
    """Dump every frame of ``src`` as a numbered frame directory."""
    os.makedirs(out_dir, exist_ok=True)
    for frame in iter_frames(src):
        name = os.path.join(out_dir, f"{frame.index:06d}{ext}")
        if ext == ".pgm":
            write_pgm(name, frame.data)
        else:
            Image.fromarray(frame.data).save(name)
    fps = getattr(src, "fps", DEFAULT_FPS) if fps is None else fps
    with open(os.path.join(out_dir, "video.meta"), "w") as fh:
        fh.write(f"fps={fps}\nframes={src.frame_count}\n")
    return out_dir
