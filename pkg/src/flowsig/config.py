"""Flat ``key=value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from fractions import Fraction

from .matcher import HierarchyPlan, MatchParams
from .motion_state import Thresholds, sequence_length
from .refine import RefineParams


class ConfigError(ValueError):
    pass


def _number(text: str) -> float:
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"not an integer list: {text!r}") from exc


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "all") else int(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else _number(text)


@dataclass(frozen=True)
class Config:
    T1: int = 4
    T2_frac: float = 1 / 6
    T3_frac: float = 1 / 6
    seg_len: int = 500
    min_motion_frac: float = 1 / 30
    lam: float = 6.0
    max_bad_segments: int = 1
    keep_one_to_many: bool = True
    levels: tuple[int, ...] = (64, 32, 16, 8)
    strides: tuple[int, ...] = (64, 32, 16, 8)
    branching: int = 2
    iterations: int = 3
    alpha: float = 0.5
    w0: float | None = None
    trials_per_level: int = 1
    connectivity: int = 8
    max_states: int | None = sequence_length(3000)
    rng_seed: int = 0
    defaulted: tuple[str, ...] = field(default=(), compare=False)

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.T1, self.T2_frac, self.T3_frac, self.seg_len, self.min_motion_frac)

    @property
    def match_params(self) -> MatchParams:
        return MatchParams(self.lam, self.max_bad_segments, self.min_motion_frac,
                           self.keep_one_to_many)

    @property
    def refine_params(self) -> RefineParams:
        return RefineParams(self.iterations, self.alpha, self.w0, self.trials_per_level,
                            self.connectivity)

    @property
    def plan(self) -> HierarchyPlan:
        if len(self.levels) != len(self.strides):
            raise ConfigError("levels and strides must have the same length")
        return HierarchyPlan(tuple(zip(self.levels, self.strides)), self.branching)

    def validate(self) -> "Config":
        try:
            self.thresholds, self.match_params, self.refine_params, self.plan
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "defaulted":
                continue
            key = "lambda" if f.name == "lam" else f.name
            v = getattr(self, f.name)
            out[key] = list(v) if isinstance(v, tuple) else v
        return out

    def with_(self, **kw) -> "Config":
        return replace(self, **kw).validate()


# config key -> (field name, parser)
_KEYS = {
    "T1": ("T1", int),
    "T2_frac": ("T2_frac", _number),
    "T3_frac": ("T3_frac", _number),
    "seg_len": ("seg_len", int),
    "min_motion_frac": ("min_motion_frac", _number),
    "lambda": ("lam", _number),
    "max_bad_segments": ("max_bad_segments", int),
    "keep_one_to_many": ("keep_one_to_many", _bool),
    "levels": ("levels", _int_list),
    "strides": ("strides", _int_list),
    "branching": ("branching", int),
    "iterations": ("iterations", int),
    "alpha": ("alpha", _number),
    "w0": ("w0", _opt_float),
    "trials_per_level": ("trials_per_level", int),
    "connectivity": ("connectivity", int),
    "max_states": ("max_states", _opt_int),
    "rng_seed": ("rng_seed", int),
}


def parse_config(text: str) -> Config:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors.

    When ``levels`` is given without ``strides``, strides default to the
    patch sizes (non-overlapping grids).
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        name, parse = _KEYS[key]
        try:
            values[name] = parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    if "levels" in values and "strides" not in values:
        values["strides"] = values["levels"]
    defaulted = tuple(k for k, (name, _) in _KEYS.items() if name not in values)
    return Config(**values, defaulted=defaulted).validate()


def load_config(path: str | None) -> Config:
    if path is None:
        return parse_config("")
    with open(path) as fh:
        return parse_config(fh.read())
