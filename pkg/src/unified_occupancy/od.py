"""Alighting inference for boarding-only fare validations.

Card holders are handled by trip chaining: the alighting stop of a
validation is the remaining stop of its course closest to where the same
card boards next (the last validation of the day wraps to the first one).
Whatever cannot be chained draws an alighting stop from the chained
history of the same line and direction.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from .config import Config
from .core import Course, Direction, OccupancyProfile, occupancy_from_flows
from .ingest import NetworkDataset, write_csv

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8

CHAINED = "chained"
CHAINED_DAYWRAP = "chained_daywrap"
FALLBACK_PROPORTIONAL = "fallback_proportional"
FALLBACK_UNIFORM = "fallback_uniform"

TRIP_COLUMNS = ["validation", "card_id", "course_id", "line_id", "direction",
                "boarding_seq", "alighting_seq", "alighting_station_id", "method"]


def haversine_m(lon1, lat1, lon2, lat2):
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def _nearest_downstream(dataset: NetworkDataset, route: tuple[str, ...], boarding_seq: int,
                        target: str, radius_m: float) -> Optional[int]:
    """Seq of the stop after ``boarding_seq`` closest to ``target``, if within radius."""
    remaining = route[boarding_seq:]
    if not remaining:
        return None
    st = dataset.stations
    t = st[target]
    lons = np.array([st[s].lon for s in remaining])
    lats = np.array([st[s].lat for s in remaining])
    d = haversine_m(lons, lats, t.lon, t.lat)
    k = int(np.argmin(d))
    if d[k] > radius_m:
        return None
    return boarding_seq + 1 + k


def chain_trips(dataset: NetworkDataset, config: Optional[Config] = None) -> pd.DataFrame:
    """Trip-chain every card holder's validations, one service day at a time.

    Returns one row per chained validation (columns ``TRIP_COLUMNS``);
    validations that cannot be chained are simply absent.
    """
    config = config or Config()
    v = dataset.validations
    v = v[v["card_id"].notna()].copy()
    if v.empty:
        return pd.DataFrame(columns=TRIP_COLUMNS)
    v["validation"] = v.index
    v = v.sort_values(["card_id", "service_date", "timestamp", "validation"], kind="stable")
    day = v.groupby(["card_id", "service_date"], sort=False)["station_id"]
    v["target"] = day.shift(-1)
    v["n_day"] = day.transform("size")
    first = day.transform("first")
    wrap = v["target"].isna()
    v.loc[wrap, "target"] = first[wrap]
    v["method"] = np.where(wrap, CHAINED_DAYWRAP, CHAINED)
    v = v[v["n_day"] >= 2].copy()

    cache = {}
    out = []
    for line, direction, seq, target in zip(v["line_id"], v["direction"], v["seq"], v["target"]):
        key = (line, direction, seq, target)
        if key not in cache:
            route = dataset.routes[(line, Direction(direction))]
            cache[key] = _nearest_downstream(dataset, route, int(seq), target, config.walk_radius_m)
        out.append(cache[key])
    v["alighting_seq"] = pd.array(out, dtype="Int64")
    v = v[v["alighting_seq"].notna()]
    return _finish(dataset, v)


def _finish(dataset: NetworkDataset, df: pd.DataFrame) -> pd.DataFrame:
    df = df.rename(columns={"seq": "boarding_seq"})
    df["alighting_seq"] = df["alighting_seq"].astype(int)
    df["boarding_seq"] = df["boarding_seq"].astype(int)
    df["alighting_station_id"] = [
        dataset.routes[(line, Direction(d))][s - 1]
        for line, d, s in zip(df["line_id"], df["direction"], df["alighting_seq"])
    ]
    return df.sort_values("validation")[TRIP_COLUMNS].reset_index(drop=True)


def fallback_alightings(dataset: NetworkDataset, chained: pd.DataFrame,
                        config: Optional[Config] = None,
                        seed: Optional[int] = None) -> pd.DataFrame:
    """Draw alightings for validations left over by ``chain_trips``.

    The draw follows the chained alightings of the same line, direction and
    boarding stop; without such history, the chained alightings of the line
    and direction restricted to downstream stops; without any, a uniform
    choice among downstream stops.
    """
    config = config or Config()
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    v = dataset.validations
    done = chained["validation"] if len(chained) else []
    rest = v[~v.index.isin(done)].copy()
    rest["validation"] = rest.index
    if rest.empty:
        return pd.DataFrame(columns=TRIP_COLUMNS)

    if chained.empty:
        chained = pd.DataFrame({c: pd.Series(dtype=int) for c in
                                ("line_id", "direction", "boarding_seq", "alighting_seq")})
    by_stop = chained.groupby(["line_id", "direction", "boarding_seq"])["alighting_seq"] \
        .value_counts().sort_index()
    by_line = chained.groupby(["line_id", "direction"])["alighting_seq"].value_counts().sort_index()
    by_stop = {k: g.droplevel([0, 1, 2]) for k, g in by_stop.groupby(level=[0, 1, 2])}
    by_line = {k: g.droplevel([0, 1]) for k, g in by_line.groupby(level=[0, 1])}

    alight = np.zeros(len(rest), dtype=int)
    method = np.empty(len(rest), dtype=object)
    groups = rest.groupby(["line_id", "direction", "seq"], sort=True).indices
    for (line, direction, seq), idx in groups.items():
        n_stops = len(dataset.routes[(line, Direction(direction))])
        downstream = np.arange(seq + 1, n_stops + 1)
        hist = by_stop.get((line, direction, seq))
        if hist is None:
            hist = by_line.get((line, direction))
            if hist is not None:
                hist = hist[hist.index > seq]
        if hist is not None and len(hist) and hist.sum() > 0:
            p = hist.to_numpy(dtype=float) / hist.sum()
            alight[idx] = rng.choice(hist.index.to_numpy(dtype=int), size=len(idx), p=p)
            method[idx] = FALLBACK_PROPORTIONAL
        else:
            alight[idx] = rng.choice(downstream, size=len(idx))
            method[idx] = FALLBACK_UNIFORM
    rest["alighting_seq"] = alight
    rest["method"] = method
    return _finish(dataset, rest)


def reconstruct(dataset: NetworkDataset, config: Optional[Config] = None,
                seed: Optional[int] = None) -> pd.DataFrame:
    """Chained plus fallback trips covering every validation."""
    chained = chain_trips(dataset, config)
    rest = fallback_alightings(dataset, chained, config, seed)
    trips = pd.concat([chained, rest], ignore_index=True)
    logger.info("reconstructed %d trips (%d chained)", len(trips), len(chained))
    return trips.sort_values("validation").reset_index(drop=True)


def ticketing_profile(course: Course, trips: pd.DataFrame) -> OccupancyProfile:
    """Ticketing load profile of one course from its reconstructed trips."""
    n = course.n_stops
    sub = trips[trips["course_id"] == course.course_id] if len(trips) else trips
    return _profile(course, sub["boarding_seq"].to_numpy(dtype=int),
                    sub["alighting_seq"].to_numpy(dtype=int), n)


def _profile(course: Course, boarding: np.ndarray, alighting: np.ndarray, n: int) -> OccupancyProfile:
    y = np.bincount(boarding - 1, minlength=n)[:n] if len(boarding) else np.zeros(n, dtype=int)
    z = np.bincount(alighting - 1, minlength=n)[:n] if len(alighting) else np.zeros(n, dtype=int)
    return OccupancyProfile(
        course=course.key,
        station_ids=course.station_ids,
        ticketing=occupancy_from_flows(y, z),
        alightings_ticketing=z,
        boardings_ticketing=y,
    )


def ticketing_profiles(dataset: NetworkDataset, trips: pd.DataFrame,
                       course_ids: Optional[Iterable[str]] = None) -> dict[str, OccupancyProfile]:
    """Ticketing profiles for many courses (all courses by default)."""
    ids = list(dataset.courses) if course_ids is None else list(course_ids)
    groups = trips.groupby("course_id").indices if len(trips) else {}
    b = trips["boarding_seq"].to_numpy(dtype=int)
    a = trips["alighting_seq"].to_numpy(dtype=int)
    empty = np.array([], dtype=int)
    out = {}
    for cid in ids:
        course = dataset.courses[cid]
        idx = groups.get(cid, empty)
        out[cid] = _profile(course, b[idx], a[idx], course.n_stops)
    return out


def write_trips(trips: pd.DataFrame, path: Union[str, Path]) -> Path:
    cols = ["card_id", "course_id", "boarding_seq", "alighting_seq", "method"]
    return write_csv(trips[cols], path)


def read_trips(dataset: NetworkDataset, path: Union[str, Path]) -> pd.DataFrame:
    """Load a ``trips.csv`` written by :func:`write_trips` for this dataset."""
    df = pd.read_csv(path, dtype={"card_id": str, "course_id": str})
    keys = {cid: c.key for cid, c in dataset.courses.items()}
    df["line_id"] = [keys[c].line_id for c in df["course_id"]]
    df["direction"] = [keys[c].direction.value for c in df["course_id"]]
    df["validation"] = np.arange(len(df))
    df = df.rename(columns={"boarding_seq": "seq"})
    return _finish(dataset, df)
