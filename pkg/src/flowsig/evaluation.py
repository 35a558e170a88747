"""Scoring matches against a ground-truth homography."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PX_THRESHOLDS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
DEFAULT_PATCH_THRESHOLDS = (0, 1, 2, 3, 4)


class ProjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3, 3)
        if abs(h[2, 2]) < 1e-12:
            raise ProjectiveError("h[2][2] is zero; cannot normalise")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-9:
            raise ProjectiveError("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=float))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return apply_homography(self, (x, y))

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        h = self.h
        d = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
        if np.any(np.abs(d) <= 1e-9):
            raise ProjectiveError("point maps to infinity")
        x = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / d
        y = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / d
        return np.stack([x, y], axis=1)

    def is_integer_translation(self) -> bool:
        h = self.h
        return (np.array_equal(h[:2, :2], np.eye(2)) and h[2, 0] == 0 and h[2, 1] == 0
                and float(h[0, 2]).is_integer() and float(h[1, 2]).is_integer())


def apply_homography(H: Homography, p) -> tuple[float, float]:
    x, y = p
    h = H.h
    d = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if abs(d) <= 1e-9:
        raise ProjectiveError(f"point {p} maps to infinity")
    return ((h[0, 0] * x + h[0, 1] * y + h[0, 2]) / d,
            (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / d)


def load_homography(path: str) -> Homography:
    with open(path) as fh:
        vals = [float(v) for v in fh.read().split()]
    if len(vals) != 9:
        raise ValueError(f"{path}: expected 9 values, got {len(vals)}")
    return Homography(np.array(vals).reshape(3, 3))


def save_homography(path: str, H: Homography) -> None:
    with open(path, "w") as fh:
        for row in H.h:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def pixel_distance(a_px, b_px, H: Homography) -> float:
    """Euclidean distance between ``H(a_px)`` and ``b_px``."""
    gx, gy = apply_homography(H, a_px)
    return math.hypot(gx - b_px[0], gy - b_px[1])


def patch_distance(center_pred, center_gt, P: int) -> int:
    """``ceil(2 * max(|dx|, |dy|) / P)``: error in units of the patch size."""
    if P < 1:
        raise ValueError("patch size must be >= 1")
    m = max(abs(center_pred[0] - center_gt[0]), abs(center_pred[1] - center_gt[1]))
    return math.ceil(2 * m / P)


@dataclass
class EvalReport:
    n_matches: int
    mean_px_dist: float | None
    acc_at: dict[float, float] = field(default_factory=dict)
    patch_acc_at: dict[int, float] = field(default_factory=dict)
    ranked_surface: list[tuple[float, float, float]] = field(default_factory=list)
    patch_size: int | None = None

    def summary(self) -> str:
        mean = "nan" if self.mean_px_dist is None else f"{self.mean_px_dist:.2f}"
        return f"Matches: {self.n_matches}, Dist(px): {mean}"

    def to_json(self) -> dict:
        return {
            "n_matches": self.n_matches,
            "mean_px_dist": self.mean_px_dist,
            "patch_size": self.patch_size,
            "acc_at": {str(k): v for k, v in self.acc_at.items()},
            "patch_acc_at": {str(k): v for k, v in self.patch_acc_at.items()},
            "ranked_surface": [list(r) for r in self.ranked_surface],
        }


def match_errors(matches, H: Homography, patch_size: int):
    """Per-match pixel and patch-level errors.

    ``matches`` is a sequence of dicts with ``a_px``, ``b_px`` (and
    optionally ``dist``), i.e. entries of a match JSON file.
    """
    if not matches:
        return np.zeros(0), np.zeros(0, dtype=int)
    a = np.array([m["a_px"] for m in matches], dtype=float)
    b = np.array([m["b_px"] for m in matches], dtype=float)
    gt = H.apply_many(a)
    px = np.hypot(gt[:, 0] - b[:, 0], gt[:, 1] - b[:, 1])
    cheb = np.maximum(np.abs(gt[:, 0] - b[:, 0]), np.abs(gt[:, 1] - b[:, 1]))
    patch = np.ceil(2 * cheb / patch_size).astype(int)
    return px, patch


def score(matches, H: Homography, patch_size: int,
          px_thresholds=DEFAULT_PX_THRESHOLDS,
          patch_thresholds=DEFAULT_PATCH_THRESHOLDS,
          cum_steps: int = 10) -> EvalReport:
    """Accuracy curves, patch-level accuracy and the confidence-ranked surface."""
    n = len(matches)
    if n == 0:
        return EvalReport(0, None, patch_size=patch_size)
    px, patch = match_errors(matches, H, patch_size)
    acc = {float(t): float(np.mean(px <= t)) for t in sorted(px_thresholds)}
    pacc = {int(t): float(np.mean(patch <= t)) for t in sorted(patch_thresholds)}

    dist = np.array([m.get("dist", 0.0) for m in matches], dtype=float)
    order = np.argsort(dist, kind="stable")
    ranked = px[order]
    surface = []
    for k in range(1, cum_steps + 1):
        frac = k / cum_steps
        take = max(1, math.ceil(frac * n))
        for t in sorted(px_thresholds):
            surface.append((frac, float(t), float(np.mean(ranked[:take] <= t))))
    return EvalReport(n, float(px.mean()), acc, pacc, surface, patch_size)


def pooled_and_scene_means(reports: list[EvalReport]) -> tuple[float | None, float | None]:
    """Mean pixel error pooled over all matches, and the mean of per-scene means."""
    scenes = [r for r in reports if r.n_matches]
    if not scenes:
        return None, None
    total = sum(r.n_matches for r in scenes)
    pooled = sum(r.mean_px_dist * r.n_matches for r in scenes) / total
    return pooled, float(np.mean([r.mean_px_dist for r in scenes]))
