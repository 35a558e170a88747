"""End-to-end run: states for both videos, hierarchical matching, refinement."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .config import Config
from .matcher import LevelMatch, LevelResult, MatchTriplet, run_hierarchy
from .motion_state import build_sequences
from .refine import refine_level
from .sequences import LevelStates, PatchGrid

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    config: Config
    levels: list[LevelResult]
    states_a: list[LevelStates] = field(repr=False)
    states_b: list[LevelStates] = field(repr=False)
    build_time: float = 0.0
    propagation_history: dict[int, list[int]] = field(default_factory=dict)

    @property
    def final(self) -> LevelResult:
        return self.levels[-1]

    def timings(self) -> list[dict]:
        return [{"level": r.level, "patch_size": r.grid_a.patch_size,
                 "tau1_match_s": r.match_time, "tau2_propagation_s": r.refine_time}
                for r in self.levels]


def match_states(states_a: list[LevelStates], states_b: list[LevelStates], cfg: Config,
                 threads: int = 1, refine: bool = True):
    """Run the hierarchy on prebuilt states. Returns (level results, history)."""
    history: dict[int, list[int]] = {}
    rp = cfg.refine_params

    def hook(i: int, lm: LevelMatch, A, B, a_c, b_c) -> list[MatchTriplet]:
        hist = history.setdefault(i, [])
        return refine_level(lm.triplets, A, B, rp, lm.threshold, a_c, b_c,
                            seed=cfg.rng_seed, level=i, threads=threads, history=hist)

    levels = run_hierarchy(states_a, states_b, cfg.plan, cfg.match_params,
                           refine=hook if refine else None, threads=threads)
    return levels, history


def run_pipeline(src_a, src_b, cfg: Config, threads: int = 1, refine: bool = True) -> PipelineResult:
    t0 = time.perf_counter()
    plan = cfg.plan
    th = cfg.thresholds
    states_a = build_sequences(src_a, plan.levels, th, cfg.max_states)
    states_b = build_sequences(src_b, plan.levels, th, cfg.max_states)
    build_time = time.perf_counter() - t0
    levels, history = match_states(states_a, states_b, cfg, threads, refine)
    return PipelineResult(cfg, levels, states_a, states_b, build_time, history)


def level_json(result: LevelResult) -> dict:
    """Match-file payload for one level (schema shared by matcher and refine)."""
    ga, gb = result.grid_a, result.grid_b
    matched = {(t.a, t.b) for t in result.matched}
    entries = []
    for t in result.triplets:
        entries.append({
            "a": [t.a[1], t.a[2]],
            "b": [t.b[1], t.b[2]],
            "a_px": list(ga.center(t.a[1], t.a[2])),
            "b_px": list(gb.center(t.b[1], t.b[2])),
            "dist": t.dist,
            "refined": (t.a, t.b) not in matched,
        })
    return {"level": result.level, "patch_size": ga.patch_size, "stride": ga.stride,
            "matches": entries}


def grid_json(grid: PatchGrid) -> dict:
    return {"patch_size": grid.patch_size, "stride": grid.stride, "rows": grid.rows,
            "cols": grid.cols, "width": grid.width, "height": grid.height}
