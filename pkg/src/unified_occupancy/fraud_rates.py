"""Mean fraud rate per (station, line) from APC-equipped courses.

For a course with counting cells, the per-stop ratio is
``(O - O_ticketing) / O_ticketing``; the station rate is the arithmetic mean of
those ratios over the line's covered courses.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .config import Config
from .core import OccupancyProfile, apc_occupancy
from .errors import NoCoveredCourses
from .ingest import NetworkDataset, write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateEntry:
    rate: float
    n_courses: int


@dataclass
class FraudRateTable:
    """Rates keyed by ``(station_id, line_id)``, or with the direction appended
    when the table was built per direction."""

    entries: dict[tuple, RateEntry]
    by_direction: bool = False
    diagnostics: Counter = field(default_factory=Counter)

    def key(self, station_id: str, line_id: str, direction=None) -> tuple:
        if self.by_direction:
            return (station_id, line_id, getattr(direction, "value", direction))
        return (station_id, line_id)

    def lookup(self, station_id: str, line_id: str, direction=None) -> Optional[RateEntry]:
        return self.entries.get(self.key(station_id, line_id, direction))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries

    def station_rates(self) -> dict[str, float]:
        """One rate per station: the mean over the lines serving it."""
        acc = defaultdict(list)
        for key, entry in self.entries.items():
            acc[key[0]].append(entry.rate)
        return {sid: float(np.mean(v)) for sid, v in sorted(acc.items())}

    def to_frame(self) -> pd.DataFrame:
        cols = ["station_id", "line_id"] + (["direction"] if self.by_direction else [])
        rows = [(*k, e.rate, e.n_courses) for k, e in sorted(self.entries.items())]
        return pd.DataFrame(rows, columns=cols + ["rate", "n_courses"])


def course_fraud_ratios(measured, ticketing, diagnostics: Optional[Counter] = None) -> np.ndarray:
    """Per-stop ``(O - O_ticketing) / O_ticketing``; NaN where undefined.

    Positions with zero ticketing occupancy, and the last stop, carry NaN.
    Zero-denominator positions before the last stop are tallied under
    ``"skipped_zero_ticketing"``.
    """
    o = np.asarray(measured, dtype=float)
    ov = np.asarray(ticketing, dtype=float)
    out = np.full(len(o), np.nan)
    head = slice(0, len(o) - 1)
    ok = ov[head] > 0
    out[head][ok] = (o[head][ok] - ov[head][ok]) / ov[head][ok]
    if diagnostics is not None:
        diagnostics["skipped_zero_ticketing"] += int((~ok).sum())
    return out


def _mean(values: list[float]) -> float:
    # shifted sum: identical inputs give back that value exactly
    first = values[0]
    return first + math.fsum(v - first for v in values) / len(values)


def mean_fraud_rates(dataset: NetworkDataset, ratios: Mapping[str, np.ndarray],
                     config: Optional[Config] = None) -> FraudRateTable:
    """Aggregate per-course ratios into a :class:`FraudRateTable`.

    ``ratios`` maps covered course ids to their ratio vectors.  Negative means
    are floored at zero after averaging.
    """
    config = config or Config()
    if not dataset.apc_coverage:
        raise NoCoveredCourses("no course carries APC measures on every stop")
    by_dir = config.rates_by_direction
    acc: dict[tuple, list[float]] = defaultdict(list)
    for cid in sorted(ratios):
        course = dataset.courses[cid]
        line, direction = course.key.line_id, course.key.direction.value
        for sid, r in zip(course.station_ids, ratios[cid]):
            if np.isfinite(r):
                key = (sid, line, direction) if by_dir else (sid, line)
                acc[key].append(float(r))
    diagnostics = Counter()
    entries = {}
    for key, values in sorted(acc.items()):
        if len(values) < config.min_courses:
            diagnostics["below_min_courses"] += 1
            continue
        rate = _mean(values)
        if rate < 0:
            diagnostics["floored_negative"] += 1
            logger.debug("negative mean rate %.4f at %s floored to 0", rate, key)
            rate = 0.0
        entries[key] = RateEntry(rate, len(values))
    return FraudRateTable(entries, by_dir, diagnostics)


def measured_occupancies(dataset: NetworkDataset, course_ids: Optional[Iterable[str]] = None,
                         notes: Optional[list] = None) -> dict[str, np.ndarray]:
    ids = sorted(dataset.apc_coverage if course_ids is None else course_ids)
    return {cid: apc_occupancy(dataset.courses[cid].stops, notes) for cid in ids}


def estimate_rate_table(dataset: NetworkDataset, ticketing: Mapping[str, OccupancyProfile],
                        config: Optional[Config] = None,
                        course_ids: Optional[Iterable[str]] = None,
                        measured: Optional[Mapping[str, np.ndarray]] = None) -> FraudRateTable:
    """Ratios and mean rates over covered courses (all of them by default)."""
    if not dataset.apc_coverage:
        raise NoCoveredCourses("no course carries APC measures on every stop")
    ids = sorted(dataset.apc_coverage if course_ids is None else course_ids)
    if measured is None:
        measured = measured_occupancies(dataset, ids)
    diagnostics = Counter()
    ratios = {cid: course_fraud_ratios(measured[cid], ticketing[cid].ticketing, diagnostics)
              for cid in ids}
    table = mean_fraud_rates(dataset, ratios, config)
    table.diagnostics.update(diagnostics)
    return table


def write_rate_table(table: FraudRateTable, path: Union[str, Path]) -> Path:
    return write_csv(table.to_frame(), path)


def read_rate_table(path: Union[str, Path]) -> FraudRateTable:
    df = pd.read_csv(path, dtype={"station_id": str, "line_id": str, "direction": str})
    by_dir = "direction" in df.columns
    keys = ["station_id", "line_id"] + (["direction"] if by_dir else [])
    entries = {tuple(r[k] for k in keys): RateEntry(float(r["rate"]), int(r["n_courses"]))
               for _, r in df.iterrows()}
    return FraudRateTable(entries, by_dir)
