"""Match pixel blocks across two videos by their binary motion signatures."""
from .config import Config, load_config, parse_config
from .evaluation import EvalReport, Homography, patch_distance, score
from .matcher import (HierarchyPlan, MatchParams, MatchTriplet, run_hierarchy,
                      segmented_distance, sequence_distance)
from .motion_state import Thresholds, build_sequences
from .pipeline import PipelineResult, run_pipeline
from .refine import RefineParams, refine_level
from .video_io import open_video

__all__ = [
    "Config", "EvalReport", "HierarchyPlan", "Homography", "MatchParams", "MatchTriplet",
    "PipelineResult", "RefineParams", "Thresholds", "build_sequences", "load_config",
    "open_video", "parse_config", "patch_distance", "refine_level", "run_hierarchy",
    "run_pipeline", "score", "segmented_distance", "sequence_distance",
]
