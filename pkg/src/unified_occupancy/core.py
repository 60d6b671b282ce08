"""Domain types and load-profile arithmetic.

Occupancy ``O[i]`` is the number of passengers aboard between stop ``i`` and
stop ``i + 1``; it is the running sum of boardings minus alightings.
"""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import LengthMismatch, MissingApc, NegativeOccupancy

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    OUTBOUND = "outbound"
    INBOUND = "inbound"


class ProfileSource(str, Enum):
    APC_MEASURED = "apc_measured"
    UNIFIED_MEAN_RATE = "unified_mean_rate"
    UNIFIED_KRIGED = "unified_kriged"
    BASELINE = "baseline"


@dataclass(frozen=True)
class Station:
    station_id: str
    name: str
    lon: float
    lat: float

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"station {self.station_id}: lon {self.lon} out of range")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"station {self.station_id}: lat {self.lat} out of range")


@dataclass(frozen=True)
class CourseKey:
    course_id: str
    line_id: str
    direction: Direction
    service_date: dt.date
    start_time: float  # seconds since service-day midnight


@dataclass(frozen=True)
class ApcMeasure:
    boardings: Optional[float] = None
    alightings: Optional[float] = None
    occupancy_after: Optional[float] = None

    def __post_init__(self):
        has_flows = self.boardings is not None and self.alightings is not None
        if self.occupancy_after is None and not has_flows:
            raise ValueError("APC measure needs occupancy_after or both flows")
        for value in (self.boardings, self.alightings, self.occupancy_after):
            if value is not None and value < 0:
                raise ValueError("APC counts must be non-negative")

    @property
    def has_flows(self) -> bool:
        return self.boardings is not None and self.alightings is not None


@dataclass(frozen=True)
class StopEvent:
    station_id: str
    seq: int
    boardings_afc: int = 0
    apc: Optional[ApcMeasure] = None

    def __post_init__(self):
        if self.boardings_afc < 0:
            raise ValueError("boardings_afc must be non-negative")


@dataclass(frozen=True)
class Course:
    key: CourseKey
    stops: tuple[StopEvent, ...]

    def __post_init__(self):
        if len(self.stops) < 2:
            raise ValueError(f"course {self.key.course_id}: needs at least 2 stops")
        if [s.seq for s in self.stops] != list(range(1, len(self.stops) + 1)):
            raise ValueError(f"course {self.key.course_id}: seq must be 1..N contiguous")

    @property
    def course_id(self) -> str:
        return self.key.course_id

    @property
    def n_stops(self) -> int:
        return len(self.stops)

    @property
    def station_ids(self) -> tuple[str, ...]:
        return tuple(s.station_id for s in self.stops)

    @property
    def has_full_apc(self) -> bool:
        return all(s.apc is not None for s in self.stops)


def _frozen(values) -> Optional[np.ndarray]:
    if values is None:
        return None
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class OccupancyProfile:
    """Per-stop occupancy vectors of one course.

    ``fraud`` and ``total`` are ``None`` on a ticketing-only profile.
    """

    course: CourseKey
    station_ids: tuple[str, ...]
    ticketing: np.ndarray
    alightings_ticketing: np.ndarray
    boardings_ticketing: np.ndarray
    fraud: Optional[np.ndarray] = None
    total: Optional[np.ndarray] = None
    source: Optional[ProfileSource] = None
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("ticketing", "alightings_ticketing", "boardings_ticketing", "fraud", "total"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.station_ids)
        for name in ("ticketing", "alightings_ticketing", "boardings_ticketing", "fraud", "total"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise LengthMismatch(f"{name} has length {len(arr)}, expected {n}")
        if np.any(self.ticketing < 0):
            raise NegativeOccupancy(f"course {self.course.course_id}: negative ticketing occupancy")
        if n and self.ticketing[-1] != 0:
            raise ValueError(f"course {self.course.course_id}: vehicle must be empty after last stop")
        if (self.fraud is None) != (self.total is None):
            raise ValueError("fraud and total must be set together")
        if self.total is not None:
            if np.any(self.fraud < 0) or np.any(self.total < 0):
                raise NegativeOccupancy(f"course {self.course.course_id}: negative occupancy")
            if not np.allclose(self.total, self.ticketing + self.fraud, rtol=0, atol=1e-9):
                raise ValueError(f"course {self.course.course_id}: total != ticketing + fraud")
            if self.total[-1] != 0:
                raise ValueError(f"course {self.course.course_id}: vehicle must be empty after last stop")

    @property
    def course_id(self) -> str:
        return self.course.course_id

    @property
    def n_stops(self) -> int:
        return len(self.station_ids)


def occupancy_from_flows(boardings: Sequence[float], alightings: Sequence[float]) -> np.ndarray:
    """Running load ``O[i] = sum_{j<=i} (Y[j] - Z[j])``.

    Raises
    ------
    LengthMismatch
        Vectors differ in length or have fewer than two stops.
    NegativeOccupancy
        A prefix sum goes below zero (more alightings than passengers aboard).
    """
    y = np.asarray(boardings)
    z = np.asarray(alightings)
    if y.ndim != 1 or y.shape != z.shape:
        raise LengthMismatch(f"boardings {y.shape} and alightings {z.shape} differ")
    if len(y) < 2:
        raise LengthMismatch("a course has at least two stops")
    if z[0] != 0:
        raise ValueError("nobody can alight at the first stop")
    if y[-1] != 0:
        raise ValueError("nobody can board at the last stop")
    occ = np.cumsum(y - z)
    if np.any(occ < 0):
        first = int(np.argmax(occ < 0)) + 1
        raise NegativeOccupancy(f"occupancy negative after stop {first}")
    return occ


def flows_from_occupancy(occupancy: Sequence[float]) -> np.ndarray:
    """Net flow ``Y[i] - Z[i]`` per stop; inverse of the running sum."""
    occ = np.asarray(occupancy)
    return np.diff(occ, prepend=0)


def apc_occupancy(stops: Sequence[StopEvent], notes: Optional[list] = None) -> np.ndarray:
    """Measured occupancy of a fully APC-equipped course.

    A stop's ``occupancy_after`` wins over flow-derived occupancy; when both
    exist and disagree a note is appended to ``notes`` (and logged).
    """
    missing = [s.seq for s in stops if s.apc is None]
    if missing:
        raise MissingApc(f"no APC measure at seq {missing}")
    measures = [s.apc for s in stops]
    derived = None
    if all(m.has_flows for m in measures):
        derived = occupancy_from_flows([m.boardings for m in measures],
                                       [m.alightings for m in measures])
    out = np.empty(len(stops), dtype=float)
    for i, (stop, m) in enumerate(zip(stops, measures)):
        if m.occupancy_after is not None:
            out[i] = m.occupancy_after
            if derived is not None and derived[i] != m.occupancy_after:
                msg = (f"seq {stop.seq}: occupancy_after={m.occupancy_after:g} "
                       f"but flows give {derived[i]:g}")
                logger.debug(msg)
                if notes is not None:
                    notes.append(msg)
        elif derived is not None:
            out[i] = derived[i]
        else:
            raise MissingApc(f"seq {stop.seq}: no occupancy and flows incomplete on course")
    return out
