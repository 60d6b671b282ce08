"""Run configuration read from ``key=value`` text files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union


@dataclass(frozen=True)
class Config:
    # ingestion
    schedule_match_window_s: float = 300.0
    max_course_duration_s: float = 7200.0
    reject_log_path: Optional[str] = None
    # O/D reconstruction
    walk_radius_m: float = 800.0
    rng_seed: int = 42
    # fraud rates
    min_courses: int = 1
    rates_by_direction: bool = False
    # geostatistics
    variogram_bins: int = 12
    variogram_max_dist_fraction: float = 0.5
    # fraud map
    grid_resolution: int = 200
    grid_margin: float = 0.10

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return value


def parse_key_values(text: str) -> list[tuple[str, str]]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped.

    Repeated keys are kept in order (the synthetic scenario format relies on it).
    """
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: Union[str, Path, None] = None, **overrides) -> Config:
    """Read a config file, ignoring keys that belong to other tools."""
    values = {}
    if path is not None:
        types = {f.name: f.type for f in fields(Config)}
        for key, value in parse_key_values(Path(path).read_text(encoding="utf-8")):
            if key not in types:
                continue
            kind = types[key]
            if kind.startswith("Optional"):
                values[key] = value or None
            else:
                values[key] = _coerce(value, kind)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)
