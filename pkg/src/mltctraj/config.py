"""Pipeline configuration: defaults, key/value file parsing and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path
from typing import Any, Mapping

AGE_ANCHORS = ("median_event", "age_at_study_start", "age_at_first_event")
DIRECTION_TESTS = ("two_sided", "one_sided")
EDGE_WEIGHTINGS = ("trajectory", "patient")


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a pipeline config."""


@dataclass(frozen=True)
class PipelineConfig:
    """All tunable thresholds of the pipeline.

    Defaults: Bonferroni alpha 0.001, binomial direction threshold 0.05,
    at least 10 co-affected patients with a 6-month (183 day) separation,
    length-3 trajectories shared by at least 10 patients, and a
    Calinski-Harabasz sweep over k = 2..10.
    """

    study_start: date = date(2000, 1, 1)
    study_end: date = date(2021, 12, 31)
    age_threshold: int = 45
    age_anchor: str = "median_event"
    min_separation_days: int = 183
    min_pair_patients: int = 10
    alpha: float = 0.001
    direction_alpha: float = 0.05
    direction_test: str = "two_sided"
    strict_table: bool = False
    traj_length: int = 3
    min_traj_patients: int = 10
    traj_min_gap_days: int = 0
    require_all_pairs: bool = False
    edge_weighting: str = "trajectory"
    clamp_similarity: bool = True
    k_min: int = 2
    k_max: int = 10
    seed: int = 0
    long_stay_days: int = 4
    report_long_stay: bool = True

    def __post_init__(self) -> None:
        if self.study_end < self.study_start:
            raise ConfigError("study_end precedes study_start")
        if self.age_anchor not in AGE_ANCHORS:
            raise ConfigError(f"age_anchor must be one of {AGE_ANCHORS}")
        if self.direction_test not in DIRECTION_TESTS:
            raise ConfigError(f"direction_test must be one of {DIRECTION_TESTS}")
        if self.edge_weighting not in EDGE_WEIGHTINGS:
            raise ConfigError(f"edge_weighting must be one of {EDGE_WEIGHTINGS}")
        for name in ("alpha", "direction_alpha"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.traj_length < 2:
            raise ConfigError("traj_length must be >= 2")
        if self.k_min < 2 or self.k_max < self.k_min:
            raise ConfigError("need 2 <= k_min <= k_max")
        for name in ("min_separation_days", "min_pair_patients", "min_traj_patients",
                     "traj_min_gap_days", "long_stay_days"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        parsed = {}
        for key, raw in values.items():
            default = known[key].default
            try:
                parsed[key] = _coerce(raw, type(default))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
        return cls(**parsed)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Parse a ``key = value`` text file; ``#`` starts a comment."""
        values: dict[str, str] = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split(sep, 1))
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
        return cls.from_mapping(values)

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.isoformat() if isinstance(value, date) else value
        return out

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(raw: Any, kind: type) -> Any:
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        raise TypeError(f"expected {kind.__name__}")
    raw = raw.strip().strip('"').strip("'")
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind is date:
        return date.fromisoformat(raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw
