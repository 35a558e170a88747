"""``flowsig`` command line: match, eval, synth, overlay.

Exit codes: 0 success, 1 input error, 2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .config import ConfigError, load_config
from .evaluation import load_homography, score
from .matcher import NoCandidates
from .motion_state import build_sequences
from .pipeline import grid_json, level_json, match_states
from .sequences import load_states, save_states
from .synth import SceneError, load_pair_spec, write_pair
from .video_io import VideoError, open_video

log = logging.getLogger("flowsig")


class InputError(Exception):
    """Bad user input; maps to exit status 1."""


def _dump(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _states_for(src, cfg, cache_path: str | None):
    levels = cfg.plan.levels
    if cache_path and os.path.exists(cache_path):
        cached = load_states(cache_path)
        grids = [(s.grid.patch_size, s.grid.stride) for s in cached]
        if grids == [tuple(lv) for lv in levels] and cached[0].seg_len == cfg.seg_len:
            return cached
        log.warning("ignoring stale state cache %s", cache_path)
    states = build_sequences(src, levels, cfg.thresholds, cfg.max_states)
    if cache_path:
        save_states(cache_path, states)
    return states


def cmd_match(video_a: str, video_b: str, config: str | None, out: str,
              threads: int = 1, cache: str | None = None) -> int:
    cfg = load_config(config)
    src_a, src_b = open_video(video_a), open_video(video_b)
    os.makedirs(out, exist_ok=True)
    if cache:
        os.makedirs(cache, exist_ok=True)
    t0 = time.perf_counter()
    states_a = _states_for(src_a, cfg, cache and os.path.join(cache, "states_a.bin"))
    states_b = _states_for(src_b, cfg, cache and os.path.join(cache, "states_b.bin"))
    build_time = time.perf_counter() - t0

    levels, history = match_states(states_a, states_b, cfg, threads=threads)
    for r in levels:
        _dump(os.path.join(out, f"matches_L{r.level}.json"), level_json(r))
    if not levels[-1].triplets:
        log.warning("no matches: the videos show too little motion to compare")

    manifest = {
        "inputs": {"a": os.path.abspath(video_a), "b": os.path.abspath(video_b),
                   "config": os.path.abspath(config) if config else None},
        "config": cfg.to_dict(),
        "defaulted": list(cfg.defaulted),
        "frames": {"a": src_a.frame_count, "b": src_b.frame_count},
        "levels": [{
            "level": r.level,
            "grid_a": grid_json(r.grid_a),
            "grid_b": grid_json(r.grid_b),
            "threshold": r.threshold,
            "evaluations": r.evaluations,
            "matched": len(r.matched),
            "refined": len(r.triplets),
            "propagation_history": history.get(r.level, []),
            **r.stats,
        } for r in levels],
        # wall-clock values: the only part of the outputs that varies between runs
        "run": {
            "threads": threads,
            "build_s": build_time,
            "timings": [{"level": r.level, "tau1_match_s": r.match_time,
                         "tau2_propagation_s": r.refine_time} for r in levels],
        },
    }
    _dump(os.path.join(out, "manifest.json"), manifest)
    final = levels[-1]
    print(f"level {final.level} (patch {final.grid_a.patch_size}): {len(final.triplets)} matches")
    return 0


def _load_matches(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if "matches" not in data or "patch_size" not in data:
        raise InputError(f"{path}: not a match file")
    return data


def cmd_eval(matches: str, hom: str, out: str) -> int:
    data = _load_matches(matches)
    H = load_homography(hom)
    report = score(data["matches"], H, data["patch_size"])
    os.makedirs(out, exist_ok=True)
    _dump(os.path.join(out, "report.json"), report.to_json())
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "threshold", "accuracy"])
        for t, v in report.acc_at.items():
            w.writerow(["px", t, v])
        for t, v in report.patch_acc_at.items():
            w.writerow(["patch", t, v])
    print(report.summary())
    return 0


def cmd_synth(spec: str, out_dir: str) -> int:
    pair = load_pair_spec(spec)
    write_pair(pair, out_dir)
    print(f"wrote {pair.base.n_frames} frames per view to {out_dir}")
    return 0


def render_overlay(frame_a: np.ndarray, frame_b: np.ndarray, matches) -> tuple["Image.Image", int, str]:
    """Side-by-side frames with one line per match; the count goes top-left."""
    from PIL import Image, ImageDraw

    ha, wa = frame_a.shape[:2]
    hb, wb = frame_b.shape[:2]
    canvas = Image.new("RGB", (wa + wb, max(ha, hb)))
    canvas.paste(Image.fromarray(frame_a).convert("RGB"), (0, 0))
    canvas.paste(Image.fromarray(frame_b).convert("RGB"), (wa, 0))
    draw = ImageDraw.Draw(canvas)
    for m in matches:
        (xa, ya), (xb, yb) = m["a_px"], m["b_px"]
        draw.line([(xa, ya), (xb + wa, yb)], fill=(255, 255, 0), width=1)
    label = str(len(matches))
    draw.rectangle([0, 0, 8 * len(label) + 6, 16], fill=(0, 0, 0))
    draw.text((3, 2), label, fill=(255, 255, 255))
    return canvas, len(matches), label


def _read_image(path: str) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def cmd_overlay(frame_a: str, frame_b: str, matches: str, out_image: str) -> int:
    data = _load_matches(matches)
    img, n, _ = render_overlay(_read_image(frame_a), _read_image(frame_b), data["matches"])
    parent = os.path.dirname(os.path.abspath(out_image))
    os.makedirs(parent, exist_ok=True)
    img.save(out_image)
    print(f"{n} matches drawn to {out_image}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowsig", description="Match videos by motion signatures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match two frame directories")
    m.add_argument("video_a")
    m.add_argument("video_b")
    m.add_argument("--config", default=None, help="key=value file; missing keys use defaults")
    m.add_argument("--out", required=True)
    m.add_argument("--threads", type=int, default=1)
    m.add_argument("--cache", default=None, help="directory for states.bin caches")

    e = sub.add_parser("eval", help="score a match file against a homography")
    e.add_argument("matches")
    e.add_argument("hom")
    e.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="render a synthetic video pair")
    s.add_argument("spec")
    s.add_argument("out_dir")

    o = sub.add_parser("overlay", help="draw matches between two frames")
    o.add_argument("frame_a")
    o.add_argument("frame_b")
    o.add_argument("matches")
    o.add_argument("out_image")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "match":
            if args.threads < 1:
                raise InputError("--threads must be >= 1")
            return cmd_match(args.video_a, args.video_b, args.config, args.out,
                             args.threads, args.cache)
        if args.command == "eval":
            return cmd_eval(args.matches, args.hom, args.out)
        if args.command == "synth":
            return cmd_synth(args.spec, args.out_dir)
        return cmd_overlay(args.frame_a, args.frame_b, args.matches, args.out_image)
    except (InputError, ConfigError, VideoError, SceneError, NoCandidates,
            FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
