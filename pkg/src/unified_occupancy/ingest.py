"""Loading and validating the network input files.

Five comma-separated files make up a network (header row required)::

    stations.csv  station_id,name,lon,lat
    routes.csv    line_id,direction,seq,station_id
    courses.csv   course_id,line_id,direction,service_date,start_time
    afc.csv       card_id,timestamp,course_id,station_id        (card_id may be blank)
    apc.csv       course_id,seq,boardings,alightings,occupancy_after  (each count may be blank)

``timestamp`` and ``start_time`` are seconds since service-day midnight and
``service_date`` is ISO ``YYYY-MM-DD``.  Rows that cannot be used are
rejected with a reason and loading carries on; structural problems (missing
columns, routes pointing at unknown stations) raise.
"""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
import pandas as pd

from .config import Config
from .core import ApcMeasure, Course, CourseKey, Direction, Station, StopEvent
from .errors import EmptyDataset, ReferentialError, SchemaError

logger = logging.getLogger(__name__)

SCHEMAS = {
    "stations": ["station_id", "name", "lon", "lat"],
    "routes": ["line_id", "direction", "seq", "station_id"],
    "courses": ["course_id", "line_id", "direction", "service_date", "start_time"],
    "afc": ["card_id", "timestamp", "course_id", "station_id"],
    "apc": ["course_id", "seq", "boardings", "alightings", "occupancy_after"],
}
OPTIONAL_COLUMNS = {"afc": {"card_id"}, "apc": {"boardings", "alightings", "occupancy_after"}}
OPTIONAL_FILES = {"apc"}

VALIDATION_COLUMNS = ["card_id", "timestamp", "course_id", "station_id",
                      "line_id", "direction", "service_date", "seq"]


def schema_help() -> str:
    lines = ["Input files (UTF-8 CSV with header row):"]
    for name, cols in SCHEMAS.items():
        optional = OPTIONAL_COLUMNS.get(name, set())
        shown = [f"{c}(optional)" if c in optional else c for c in cols]
        lines.append(f"  {name}.csv: {','.join(shown)}")
    return "\n".join(lines)


@dataclass(frozen=True)
class Reject:
    file: str
    row: int  # 1-based data row (header excluded)
    error: str
    reason: str


@dataclass
class NetworkDataset:
    stations: dict[str, Station]
    routes: dict[tuple[str, Direction], tuple[str, ...]]
    courses: dict[str, Course]
    validations: pd.DataFrame
    apc_coverage: frozenset
    rejects: list[Reject] = field(default_factory=list)

    @property
    def centroid(self) -> tuple[float, float]:
        lons = [s.lon for s in self.stations.values()]
        lats = [s.lat for s in self.stations.values()]
        return float(np.mean(lons)), float(np.mean(lats))

    @property
    def lines(self) -> list[str]:
        return sorted({line for line, _ in self.routes})

    def route_of(self, course_id: str) -> tuple[str, ...]:
        key = self.courses[course_id].key
        return self.routes[(key.line_id, key.direction)]

    def covered_courses(self) -> list[Course]:
        return [c for cid, c in self.courses.items() if cid in self.apc_coverage]

    def without_apc(self, course_ids) -> "NetworkDataset":
        """Copy in which the given courses lose their APC measures."""
        drop = set(course_ids)
        courses = {}
        for cid, course in self.courses.items():
            if cid in drop:
                stops = tuple(StopEvent(s.station_id, s.seq, s.boardings_afc, None)
                              for s in course.stops)
                course = Course(course.key, stops)
            courses[cid] = course
        return NetworkDataset(self.stations, self.routes, courses, self.validations,
                              self.apc_coverage - drop, list(self.rejects))

    def restricted_to(self, course_ids) -> "NetworkDataset":
        """Copy keeping only the given courses and their validations."""
        keep = set(course_ids)
        courses = {cid: c for cid, c in self.courses.items() if cid in keep}
        vals = self.validations[self.validations["course_id"].isin(keep)].reset_index(drop=True)
        return NetworkDataset(self.stations, self.routes, courses, vals,
                              self.apc_coverage & keep, list(self.rejects))


def _resolve_paths(paths) -> dict[str, Path]:
    if isinstance(paths, Mapping):
        return {k: Path(v) for k, v in paths.items()}
    root = Path(paths)
    return {name: root / f"{name}.csv" for name in SCHEMAS}


def _read(name: str, path: Path) -> pd.DataFrame:
    if not path.exists():
        if name in OPTIONAL_FILES:
            return pd.DataFrame(columns=SCHEMAS[name])
        raise SchemaError(f"missing input file {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    required = [c for c in SCHEMAS[name] if c not in OPTIONAL_COLUMNS.get(name, set())]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing column(s) {', '.join(missing)}")
    for col in SCHEMAS[name]:
        if col not in df.columns:
            df[col] = ""
    return df[SCHEMAS[name]].apply(lambda s: s.str.strip())


def _numeric(df: pd.DataFrame, col: str, *, optional: bool = False) -> pd.Series:
    raw = df[col]
    values = pd.to_numeric(raw.where(raw != "", None), errors="coerce")
    if not optional and values.isna().all() and len(df):
        raise SchemaError(f"column {col!r} is not numeric")
    return values


class _RejectLog:
    def __init__(self):
        self.items: list[Reject] = []

    def add(self, file: str, rows, error: str, reason: str):
        for r in np.atleast_1d(rows):
            self.items.append(Reject(file, int(r) + 1, error, reason))


def load_network(paths: Union[str, Path, Mapping[str, Union[str, Path]]],
                 config: Optional[Config] = None) -> NetworkDataset:
    """Parse and cross-reference a network's input files.

    Validations are aggregated into ``StopEvent.boardings_afc``.  A course is
    APC-covered only when every one of its stops carries a measure.
    """
    config = config or Config()
    files = _resolve_paths(paths)
    log = _RejectLog()

    stations = _load_stations(_read("stations", files["stations"]), log)
    if not stations:
        raise EmptyDataset("no usable stations")
    routes = _load_routes(_read("routes", files["routes"]), stations)
    if not routes:
        raise EmptyDataset("no routes")
    course_keys = _load_courses(_read("courses", files["courses"]), routes, log)
    if not course_keys:
        raise EmptyDataset("no usable courses")

    validations = _load_afc(_read("afc", files["afc"]), course_keys, routes, config, log)
    apc = _load_apc(_read("apc", files["apc"]), course_keys, routes, log)

    counts = validations.groupby(["course_id", "seq"]).size().to_dict()
    courses = {}
    coverage = set()
    for cid, key in course_keys.items():
        route = routes[(key.line_id, key.direction)]
        stops = tuple(
            StopEvent(sid, seq, int(counts.get((cid, seq), 0)), apc.get((cid, seq)))
            for seq, sid in enumerate(route, 1)
        )
        course = Course(key, stops)
        courses[cid] = course
        if course.has_full_apc:
            coverage.add(cid)

    if config.reject_log_path:
        write_rejects(log.items, config.reject_log_path)
    if log.items:
        logger.info("rejected %d input rows", len(log.items))
    return NetworkDataset(stations, routes, courses, validations, frozenset(coverage), log.items)


def _load_stations(df: pd.DataFrame, log: _RejectLog) -> dict[str, Station]:
    lon = _numeric(df, "lon")
    lat = _numeric(df, "lat")
    stations = {}
    for i, row in enumerate(df.itertuples(index=False)):
        sid = row.station_id
        if not sid:
            log.add("stations", i, "SchemaError", "empty station_id")
        elif sid in stations:
            log.add("stations", i, "SchemaError", f"duplicate station_id {sid}")
        elif pd.isna(lon.iat[i]) or pd.isna(lat.iat[i]):
            log.add("stations", i, "SchemaError", "lon/lat not numeric")
        else:
            try:
                stations[sid] = Station(sid, row.name, float(lon.iat[i]), float(lat.iat[i]))
            except ValueError as exc:
                log.add("stations", i, "SchemaError", str(exc))
    return stations


def _parse_direction(value: str) -> Direction:
    try:
        return Direction(value.lower())
    except ValueError:
        raise SchemaError(f"direction must be outbound or inbound, got {value!r}") from None


def _load_routes(df: pd.DataFrame, stations) -> dict[tuple[str, Direction], tuple[str, ...]]:
    seq = _numeric(df, "seq")
    if seq.isna().any():
        raise SchemaError("routes.csv: seq must be an integer on every row")
    df = df.assign(seq=seq.astype(int))
    unknown = sorted(set(df["station_id"]) - set(stations))
    if unknown:
        raise ReferentialError(f"routes.csv references unknown station(s) {', '.join(unknown)}")
    routes = {}
    for (line, direction), grp in df.groupby(["line_id", "direction"], sort=True):
        grp = grp.sort_values("seq")
        n = len(grp)
        if list(grp["seq"]) != list(range(1, n + 1)) or n < 2:
            raise SchemaError(f"route {line}/{direction}: seq must be 1..N contiguous with N >= 2")
        routes[(line, _parse_direction(direction))] = tuple(grp["station_id"])
    return routes


def _load_courses(df: pd.DataFrame, routes, log: _RejectLog) -> dict[str, CourseKey]:
    start = _numeric(df, "start_time")
    keys: dict[str, CourseKey] = {}
    for i, row in enumerate(df.itertuples(index=False)):
        try:
            direction = _parse_direction(row.direction)
            date = dt.date.fromisoformat(row.service_date)
        except (SchemaError, ValueError) as exc:
            log.add("courses", i, "SchemaError", str(exc))
            continue
        if pd.isna(start.iat[i]):
            log.add("courses", i, "SchemaError", "start_time not numeric")
        elif row.course_id in keys:
            log.add("courses", i, "SchemaError", f"duplicate course_id {row.course_id}")
        elif (row.line_id, direction) not in routes:
            log.add("courses", i, "ReferentialError",
                    f"no route for line {row.line_id} {direction.value}")
        else:
            keys[row.course_id] = CourseKey(row.course_id, row.line_id, direction, date,
                                            float(start.iat[i]))
    return keys


def _load_afc(df: pd.DataFrame, course_keys, routes, config: Config,
              log: _RejectLog) -> pd.DataFrame:
    ts = _numeric(df, "timestamp")
    df = df.assign(timestamp=ts, row=np.arange(len(df)))
    bad_ts = df["timestamp"].isna()
    log.add("afc", df.loc[bad_ts, "row"].to_numpy(), "SchemaError", "timestamp not numeric")
    df = df[~bad_ts]

    known = df["course_id"].isin(course_keys.keys())
    log.add("afc", df.loc[~known, "row"].to_numpy(), "ReferentialError", "unknown course_id")
    df = df[known]

    meta = pd.DataFrame(
        [(cid, k.line_id, k.direction.value, k.service_date.isoformat(), k.start_time)
         for cid, k in course_keys.items()],
        columns=["course_id", "line_id", "direction", "service_date", "start_time"])
    df = df.merge(meta, on="course_id", how="left")

    seq_lookup = {}
    last_seq = {}
    for (line, direction), route in routes.items():
        last_seq[(line, direction.value)] = len(route)
        for seq, sid in enumerate(route, 1):
            seq_lookup.setdefault((line, direction.value, sid), seq)
    df["seq"] = [seq_lookup.get(t, 0) for t in zip(df["line_id"], df["direction"], df["station_id"])]
    off_route = df["seq"] == 0
    log.add("afc", df.loc[off_route, "row"].to_numpy(), "ReferentialError",
            "station not on the course's route")
    df = df[~off_route]

    n_stops = np.array([last_seq[t] for t in zip(df["line_id"], df["direction"])], dtype=int)
    at_last = df["seq"].to_numpy() == n_stops
    log.add("afc", df.loc[at_last, "row"].to_numpy(), "ReferentialError",
            "boarding at the last stop of a course")
    df = df[~at_last]

    window = config.schedule_match_window_s
    lo = df["start_time"] - window
    hi = df["start_time"] + config.max_course_duration_s + window
    outside = (df["timestamp"] < lo) | (df["timestamp"] > hi)
    log.add("afc", df.loc[outside, "row"].to_numpy(), "ReferentialError",
            "timestamp outside the course's service window")
    df = df[~outside]

    df = df.assign(card_id=df["card_id"].where(df["card_id"] != "", None))
    df = df.sort_values("row", kind="stable")
    return df[VALIDATION_COLUMNS].reset_index(drop=True)


def _load_apc(df: pd.DataFrame, course_keys, routes, log: _RejectLog) -> dict:
    seq = _numeric(df, "seq")
    values = {c: _numeric(df, c, optional=True) for c in ("boardings", "alightings", "occupancy_after")}
    out = {}
    for i, cid in enumerate(df["course_id"]):
        if cid not in course_keys:
            log.add("apc", i, "ReferentialError", "unknown course_id")
            continue
        key = course_keys[cid]
        n = len(routes[(key.line_id, key.direction)])
        s = seq.iat[i]
        if pd.isna(s) or not 1 <= s <= n or s != int(s):
            log.add("apc", i, "ReferentialError", f"seq {df['seq'].iat[i]!r} not on course")
            continue
        s = int(s)
        if (cid, s) in out:
            log.add("apc", i, "SchemaError", f"duplicate APC row for seq {s}")
            continue
        b, a, o = (values[c].iat[i] for c in ("boardings", "alightings", "occupancy_after"))
        try:
            out[(cid, s)] = ApcMeasure(None if pd.isna(b) else float(b),
                                       None if pd.isna(a) else float(a),
                                       None if pd.isna(o) else float(o))
        except ValueError as exc:
            log.add("apc", i, "SchemaError", str(exc))
    return out


def coverage_summary(dataset: NetworkDataset) -> pd.DataFrame:
    """Courses and APC-covered courses per (line, direction)."""
    rows = []
    counts: dict[tuple, list[int]] = {key: [0, 0] for key in dataset.routes}
    for cid, course in dataset.courses.items():
        k = (course.key.line_id, course.key.direction)
        counts[k][0] += 1
        counts[k][1] += cid in dataset.apc_coverage
    for (line, direction), (n, covered) in sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        ratio = covered / n if n else 0.0
        rows.append({"line_id": line, "direction": direction.value, "n_courses": n,
                     "n_covered": covered, "ratio": ratio, "kriging_only": covered == 0})
    return pd.DataFrame(rows, columns=["line_id", "direction", "n_courses", "n_covered",
                                       "ratio", "kriging_only"])


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def write_rejects(rejects, path) -> Path:
    df = pd.DataFrame([(r.file, r.row, r.error, r.reason) for r in rejects],
                      columns=["file", "row", "error", "reason"])
    return write_csv(df, path)


def save_dataset(dataset: NetworkDataset, out_dir: Union[str, Path]) -> list[Path]:
    """Write the cross-referenced dataset as flat CSV files (deterministic)."""
    out = Path(out_dir)
    events = []
    for cid in sorted(dataset.courses):
        course = dataset.courses[cid]
        for s in course.stops:
            m = s.apc
            events.append((cid, s.seq, s.station_id, s.boardings_afc,
                           None if m is None else m.boardings,
                           None if m is None else m.alightings,
                           None if m is None else m.occupancy_after))
    stop_events = pd.DataFrame(events, columns=["course_id", "seq", "station_id", "boardings_afc",
                                                "apc_boardings", "apc_alightings",
                                                "apc_occupancy_after"])
    courses = pd.DataFrame(
        [(c.key.course_id, c.key.line_id, c.key.direction.value, c.key.service_date.isoformat(),
          c.key.start_time, int(c.course_id in dataset.apc_coverage))
         for c in (dataset.courses[cid] for cid in sorted(dataset.courses))],
        columns=["course_id", "line_id", "direction", "service_date", "start_time", "apc_covered"])
    vals = dataset.validations.sort_values(["course_id", "seq", "timestamp", "card_id"],
                                           kind="stable", na_position="first")
    return [
        write_csv(stop_events, out / "stop_events.csv"),
        write_csv(courses, out / "course_roster.csv"),
        write_csv(vals, out / "validations.csv"),
        write_csv(coverage_summary(dataset), out / "coverage.csv"),
    ]
