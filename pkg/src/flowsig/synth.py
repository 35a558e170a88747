"""Ground-truthed synthetic video pairs.

Scenes are textured objects sliding over a static background. Objects have
hard-edged footprints; their texture is sampled with bilinear
interpolation so sub-pixel motion still changes interior pixels. Every
frame is a pure function of (spec, time index), so frames can be rendered
lazily, out of order, and at negative times (needed for temporal offsets).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import Homography, save_homography
from .video_io import DEFAULT_FPS, Frame, FrameIndexError, write_video

MODALITIES = ("identity", "invert", "gamma", "threshold")
_TIME_BIAS = 1 << 24  # keeps RNG entropy words non-negative for negative times


class SceneError(ValueError):
    pass


@dataclass
class ObjectSpec:
    shape: str = "square"
    size: int = 48
    intensity: int = 160
    velocity: tuple[float, float] = (1.0, 0.5)
    start: tuple[float, float] = (0.0, 0.0)
    waypoints: list[tuple[float, float]] | None = None
    bounce: bool = True
    contrast: int = 60
    duty: float = 1.0
    block: int = 20
    cell: int = 0
    fill: float = 0.5

    def __post_init__(self):
        if self.shape not in ("square", "disc"):
            raise SceneError(f"unknown shape {self.shape!r}")
        if self.size < 1:
            raise SceneError("object size must be >= 1")
        if not 0 <= self.duty <= 1:
            raise SceneError("duty must be in [0, 1]")
        self.velocity = tuple(self.velocity)
        self.start = tuple(self.start)
        if self.waypoints is not None:
            self.waypoints = [tuple(p) for p in self.waypoints]


@dataclass
class SceneSpec:
    width: int = 320
    height: int = 240
    n_frames: int = 201
    objects: list[ObjectSpec] = field(default_factory=list)
    background: int = 40
    background_texture: int = 0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if self.width < 1 or self.height < 1 or self.n_frames < 1:
            raise SceneError("scene dimensions and frame count must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def _tri_wave(u, span):
    """Reflect ``u`` into [0, span] (bouncing between two walls)."""
    if span <= 0:
        return np.zeros_like(u)
    u = np.mod(u, 2 * span)
    return np.where(u <= span, u, 2 * span - u)


class _Trajectory:
    def __init__(self, obj: ObjectSpec, idx: int, spec: SceneSpec):
        self.obj = obj
        self.idx = idx
        self.spec = spec

    def moving(self, t: np.ndarray) -> np.ndarray:
        """Per-frame moving flag from a stop-and-go schedule of fixed-length blocks."""
        if self.obj.duty >= 1:
            return np.ones(t.shape, dtype=bool)
        if self.obj.duty <= 0:
            return np.zeros(t.shape, dtype=bool)
        blocks = np.floor_divide(t, self.obj.block)
        out = np.empty(t.shape, dtype=bool)
        for b in np.unique(blocks):
            rng = np.random.default_rng([self.spec.seed, 7, self.idx, int(b) + _TIME_BIAS])
            out[blocks == b] = rng.random() < self.obj.duty
        return out

    def elapsed(self, t_lo: int, t_hi: int) -> np.ndarray:
        """Moving time accumulated at each frame in ``[t_lo, t_hi)``, zero at t=0."""
        lo, hi = min(t_lo, 0), max(t_hi, 1)
        ts = np.arange(lo, hi)
        mv = self.moving(ts).astype(np.int64)
        cum = np.concatenate([[0], np.cumsum(mv)])  # cum[i] = moving frames in [lo, lo+i)
        tau = cum - cum[-lo]  # zero at t = 0
        return tau[t_lo - lo:t_hi - lo].astype(float)

    def position(self, tau: np.ndarray) -> np.ndarray:
        o, s = self.obj, self.spec
        if o.waypoints:
            pts = np.array([o.start] + list(o.waypoints), dtype=float)
            seg = np.hypot(*np.diff(pts, axis=0).T)
            total = seg.sum()
            speed = math.hypot(*o.velocity)
            if total == 0 or speed == 0:
                return np.repeat(pts[:1], tau.size, axis=0)
            arc = _tri_wave(speed * tau, total)
            cum = np.concatenate([[0], np.cumsum(seg)])
            x = np.interp(arc, cum, pts[:, 0])
            y = np.interp(arc, cum, pts[:, 1])
            return np.stack([x, y], axis=1)
        x = o.start[0] + o.velocity[0] * tau
        y = o.start[1] + o.velocity[1] * tau
        if o.bounce:
            x = _tri_wave(x, s.width - o.size)
            y = _tri_wave(y, s.height - o.size)
        return np.stack([x, y], axis=1)


def _texture(spec: SceneSpec, idx: int, obj: ObjectSpec) -> np.ndarray:
    """Per-pixel random texture; with ``cell > 0`` only a random ``fill``
    fraction of ``cell``-sized squares is textured and the rest is flat."""
    rng = np.random.default_rng([spec.seed, 3, idx])
    n = obj.size + 1
    tex = obj.intensity + rng.uniform(-obj.contrast, obj.contrast, size=(n, n))
    if obj.cell > 0:
        k = -(-n // obj.cell)
        on = rng.random((k, k)) < obj.fill
        on = np.repeat(np.repeat(on, obj.cell, axis=0), obj.cell, axis=1)[:n, :n]
        tex = np.where(on, tex, obj.intensity)
    return np.clip(tex, 0, 255)


def _footprint(obj: ObjectSpec) -> np.ndarray:
    if obj.shape == "square":
        return np.ones((obj.size, obj.size), dtype=bool)
    r = obj.size / 2
    yy, xx = np.mgrid[0:obj.size, 0:obj.size] + 0.5
    return (xx - r) ** 2 + (yy - r) ** 2 <= r * r


class SyntheticVideo:
    """Lazy frame source for a :class:`SceneSpec`.

    ``time_offset`` shifts the scene clock (frame k shows scene time
    ``k + time_offset``); ``view`` keys the noise generator.
    """

    def __init__(self, spec: SceneSpec, time_offset: int = 0, view: int = 0,
                 noise_sigma: float | None = None):
        self.spec = spec
        self.width, self.height = spec.width, spec.height
        self.frame_count = spec.n_frames
        self.fps = DEFAULT_FPS
        self.time_offset = time_offset
        self.view = view
        self.noise_sigma = spec.noise_sigma if noise_sigma is None else noise_sigma
        t_lo, t_hi = time_offset, time_offset + spec.n_frames
        self._objects = []
        for i, obj in enumerate(spec.objects):
            traj = _Trajectory(obj, i, spec)
            pos = traj.position(traj.elapsed(t_lo, t_hi))
            self._objects.append((obj, _texture(spec, i, obj), _footprint(obj), pos))
        self._check_visible()
        rng = np.random.default_rng([spec.seed, 5])
        bg = np.full((spec.height, spec.width), float(spec.background))
        if spec.background_texture:
            bg += rng.uniform(-spec.background_texture, spec.background_texture, bg.shape)
        self._background = np.clip(bg, 0, 255)

    def _check_visible(self):
        for i, (obj, _, _, pos) in enumerate(self._objects):
            x, y = pos[:, 0], pos[:, 1]
            inside = ((x + obj.size > 0) & (x < self.width) & (y + obj.size > 0) & (y < self.height))
            if not inside.any():
                raise SceneError(f"object {i} never enters the frame")

    def positions(self, index: int) -> list[tuple[float, float]]:
        return [tuple(p[index]) for _, _, _, p in self._objects]

    def clean(self, index: int) -> np.ndarray:
        """Noise-free float frame."""
        if not 0 <= index < self.frame_count:
            raise FrameIndexError(f"frame {index} out of range [0, {self.frame_count})")
        img = self._background.copy()
        H, W = img.shape
        for obj, tex, fp, pos in self._objects:
            x, y = pos[index]
            ix, iy = math.floor(x), math.floor(y)
            fx, fy = x - ix, y - iy
            s = obj.size
            # texture coordinate of pixel j is j - f: blend tex[j] and tex[j+1]
            patch = ((1 - fy) * ((1 - fx) * tex[1:, 1:] + fx * tex[1:, :-1])
                     + fy * ((1 - fx) * tex[:-1, 1:] + fx * tex[:-1, :-1]))
            x0, y0 = max(ix, 0), max(iy, 0)
            x1, y1 = min(ix + s, W), min(iy + s, H)
            if x0 >= x1 or y0 >= y1:
                continue
            sub = fp[y0 - iy:y1 - iy, x0 - ix:x1 - ix]
            region = img[y0:y1, x0:x1]
            region[sub] = patch[y0 - iy:y1 - iy, x0 - ix:x1 - ix][sub]
        return img

    def noisy(self, img: np.ndarray, index: int) -> np.ndarray:
        if self.noise_sigma > 0:
            rng = np.random.default_rng([self.spec.seed, 11, self.view,
                                         index + self.time_offset + _TIME_BIAS])
            noise = rng.standard_normal(img.shape, dtype=np.float32)
            img = img + np.float32(self.noise_sigma) * noise
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)

    def read_frame(self, index: int) -> Frame:
        return Frame(index, self.width, self.height, self.noisy(self.clean(index), index))


def render_scene(spec: SceneSpec) -> SyntheticVideo:
    return SyntheticVideo(spec)


# --------------------------------------------------------------------- pairs

class Warper:
    """Inverse-mapped bilinear warp by ``H`` (source -> destination)."""

    def __init__(self, H: Homography, width: int, height: int, fill: float):
        self.H = H
        self.width, self.height = width, height
        self.fill = float(fill)
        self._shift = None
        if H.is_integer_translation():
            self._shift = (int(H.h[0, 2]), int(H.h[1, 2]))
            return
        ys, xs = np.mgrid[0:height, 0:width]
        src = H.inverse().apply_many(np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float))
        sx, sy = src[:, 0], src[:, 1]
        self._valid = (sx >= 0) & (sx <= width - 1) & (sy >= 0) & (sy <= height - 1)
        sx = np.clip(sx, 0, width - 1)
        sy = np.clip(sy, 0, height - 1)
        x0 = np.minimum(np.floor(sx).astype(np.int64), width - 2)
        y0 = np.minimum(np.floor(sy).astype(np.int64), height - 2)
        self._idx = (y0, x0)
        self._w = (sx - x0, sy - y0)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        if self._shift is not None:
            tx, ty = self._shift
            out = np.full_like(img, self.fill, dtype=float)
            H, W = img.shape
            dx0, dx1 = max(tx, 0), min(W + tx, W)
            dy0, dy1 = max(ty, 0), min(H + ty, H)
            if dx0 < dx1 and dy0 < dy1:
                out[dy0:dy1, dx0:dx1] = img[dy0 - ty:dy1 - ty, dx0 - tx:dx1 - tx]
            return out
        y0, x0 = self._idx
        wx, wy = self._w
        v = ((1 - wy) * ((1 - wx) * img[y0, x0] + wx * img[y0, x0 + 1])
             + wy * ((1 - wx) * img[y0 + 1, x0] + wx * img[y0 + 1, x0 + 1]))
        v = np.where(self._valid, v, self.fill)
        return v.reshape(self.height, self.width)


def apply_modality(img: np.ndarray, modality: str, param: float | None = None) -> np.ndarray:
    """Map uint8 intensities through a simulated sensor response."""
    img = np.asarray(img, dtype=np.uint8)
    if modality == "identity":
        return img.copy()
    if modality == "invert":
        return (255 - img).astype(np.uint8)
    if modality == "gamma":
        g = 1.0 if param is None else float(param)
        lut = np.clip(np.rint(255.0 * (np.arange(256) / 255.0) ** g), 0, 255).astype(np.uint8)
        return lut[img]
    if modality == "threshold":
        tau = 127 if param is None else param
        return np.where(img > tau, 255, 0).astype(np.uint8)
    raise SceneError(f"unknown modality {modality!r}")


@dataclass
class PairSpec:
    base: SceneSpec
    H: Homography = field(default_factory=Homography.identity)
    modality: str = "identity"
    modality_param: float | None = None
    temporal_offset_states: int = 0

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = SceneSpec(**self.base)
        if not isinstance(self.H, Homography):
            self.H = Homography(np.asarray(self.H, dtype=float))
        if self.modality not in MODALITIES:
            raise SceneError(f"unknown modality {self.modality!r}")
        if abs(self.temporal_offset_states) >= max(1, (self.base.n_frames - 1) // 2):
            raise SceneError("temporal offset must be shorter than the sequence length")

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "H": self.H.h.tolist(),
            "modality": self.modality,
            "modality_param": self.modality_param,
            "temporal_offset_states": self.temporal_offset_states,
        }


class WarpedVideo:
    """View B: ``modality(warp(scene(k - 2*offset)) + noise)``."""

    def __init__(self, spec: PairSpec):
        self.spec = spec
        base = spec.base
        self.width, self.height = base.width, base.height
        self.frame_count = base.n_frames
        self.fps = DEFAULT_FPS
        self._scene = SyntheticVideo(base, time_offset=-2 * spec.temporal_offset_states, view=1)
        self._warp = Warper(spec.H, base.width, base.height, base.background)

    def read_frame(self, index: int) -> Frame:
        warped = self._warp(self._scene.clean(index))
        img = self._scene.noisy(warped, index)
        img = apply_modality(img, self.spec.modality, self.spec.modality_param)
        return Frame(index, self.width, self.height, img)


class ModalityVideo:
    """Frame-wise modality transform of another source (no warp, no extra noise)."""

    def __init__(self, src, modality: str, param: float | None = None):
        self.src = src
        self.modality, self.param = modality, param
        self.width, self.height, self.frame_count = src.width, src.height, src.frame_count
        self.fps = getattr(src, "fps", DEFAULT_FPS)

    def read_frame(self, index: int) -> Frame:
        f = self.src.read_frame(index)
        return Frame(index, f.width, f.height, apply_modality(f.data, self.modality, self.param))


def make_pair(spec: PairSpec):
    """Return ``(video_a, video_b, H)`` where ``H`` maps A pixels to B pixels."""
    return SyntheticVideo(spec.base, view=0), WarpedVideo(spec), spec.H


def random_scene(width: int = 640, height: int = 480, n_frames: int = 801,
                 n_objects: int = 8, seed: int = 0, size_range=(40, 96),
                 speed_range=(0.4, 1.0), duty: float = 0.6, block: int = 24,
                 contrast: int = 70, cell: int = 12, fill: float = 0.5, noise_sigma: float = 1.0,
                 background: int = 60, background_texture: int = 20) -> SceneSpec:
    """Bouncing stop-and-go objects with random sizes, headings and textures."""
    rng = np.random.default_rng([seed, 1])
    objects = []
    for _ in range(n_objects):
        size = int(rng.integers(size_range[0], size_range[1] + 1))
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0, 2 * math.pi)
        objects.append(ObjectSpec(
            shape="square" if rng.random() < 0.5 else "disc",
            size=size,
            intensity=int(rng.integers(90, 200)),
            velocity=(speed * math.cos(heading), speed * math.sin(heading)),
            start=(float(rng.uniform(0, width - size)), float(rng.uniform(0, height - size))),
            contrast=contrast,
            duty=duty,
            block=block,
            cell=cell,
            fill=fill,
        ))
    return SceneSpec(width, height, n_frames, objects, background, background_texture,
                     noise_sigma, seed)


def write_pair(spec: PairSpec, out_dir: str, ext: str = ".pgm") -> dict:
    """Write ``a/``, ``b/``, ``gt.hom`` and ``pair.json`` under ``out_dir``."""
    a, b, H = make_pair(spec)
    os.makedirs(out_dir, exist_ok=True)
    write_video(a, os.path.join(out_dir, "a"), ext)
    write_video(b, os.path.join(out_dir, "b"), ext)
    save_homography(os.path.join(out_dir, "gt.hom"), H)
    manifest = spec.to_json()
    with open(os.path.join(out_dir, "pair.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_pair_spec(path: str) -> PairSpec:
    with open(path) as fh:
        raw = json.load(fh)
    if "base" not in raw:
        raw = {"base": raw}
    base = raw["base"]
    if "random" in base:
        base = random_scene(**base["random"])
    else:
        base = SceneSpec(**base)
    return PairSpec(base=base, H=raw.get("H", np.eye(3).tolist()),
                    modality=raw.get("modality", "identity"),
                    modality_param=raw.get("modality_param"),
                    temporal_offset_states=raw.get("temporal_offset_states", 0))
