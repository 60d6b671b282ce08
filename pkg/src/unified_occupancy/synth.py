"""Synthetic networks with known ground truth.

Lines cross a common centre (a radial network); with an odd number of stops
every line shares the hub station.  Travellers make one outbound trip and
return on an inbound course of the same line later or earlier that day,
reversing their origin and destination.  Each boarding is a fare evader
independently with the probability given by a smooth spatial field at the
boarding station; evaders never validate.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .config import parse_key_values
from .errors import InvalidScenario
from .geostat import VariogramModel, unproject
from .ingest import write_csv

TRUTH_FILES = ("truth_occupancy.csv", "truth_field.csv", "truth_trips.csv")


@dataclass(frozen=True)
class Bump:
    x: float
    y: float
    amplitude: float
    width: float


@dataclass(frozen=True)
class FraudField:
    """Fraud probability ``min(base + sum of Gaussian bumps, 0.5)``."""

    bumps: tuple[Bump, ...] = ()
    base: float = 0.0

    def __post_init__(self):
        if self.base < 0:
            raise InvalidScenario("field base must be >= 0")
        for b in self.bumps:
            if not 0 <= b.amplitude <= 0.5 or b.width <= 0:
                raise InvalidScenario(f"bad bump {b}")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = np.full(np.broadcast(x, y).shape, self.base)
        for b in self.bumps:
            d2 = (x - b.x) ** 2 + (y - b.y) ** 2
            p = p + b.amplitude * np.exp(-d2 / (2 * b.width ** 2))
        return np.minimum(p, 0.5)


def default_field() -> FraudField:
    return FraudField((Bump(0.0, 0.0, 0.28, 3.0),), base=0.02)


@dataclass(frozen=True)
class SynthScenario:
    n_lines: int = 6
    stops_per_line: int = 15
    courses_per_line_per_day: int = 40
    n_days: int = 14
    boarding_rate: float = 8.0
    coverage: float = 0.3
    fraud_field: FraudField = field(default_factory=default_field)
    rng_seed: int = 42
    stop_spacing_km: float = 1.2
    trip_scale_km: float = 1.5
    card_share: float = 0.9
    apc_noise: bool = False
    centroid_lon: float = 5.0
    centroid_lat: float = 47.0
    start_date: dt.date = dt.date(2024, 3, 4)
    service_start_s: float = 6 * 3600
    service_end_s: float = 22 * 3600
    stop_travel_s: float = 90.0

    def __post_init__(self):
        for name in ("n_lines", "stops_per_line", "courses_per_line_per_day", "n_days"):
            if getattr(self, name) < 1:
                raise InvalidScenario(f"{name} must be >= 1")
        if self.stops_per_line < 2:
            raise InvalidScenario("stops_per_line must be >= 2")
        if not 0.0 <= self.coverage <= 1.0:
            raise InvalidScenario("coverage must lie in [0, 1]")
        if not 0.0 <= self.card_share <= 1.0:
            raise InvalidScenario("card_share must lie in [0, 1]")
        if self.boarding_rate < 0 or self.stop_spacing_km <= 0 or self.trip_scale_km <= 0:
            raise InvalidScenario("rates and distances must be positive")

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.centroid_lon, self.centroid_lat)


_SCENARIO_TYPES = {
    "n_lines": int, "stops_per_line": int, "courses_per_line_per_day": int, "n_days": int,
    "boarding_rate": float, "coverage": float, "rng_seed": int, "stop_spacing_km": float,
    "trip_scale_km": float, "card_share": float, "centroid_lon": float, "centroid_lat": float,
    "service_start_s": float, "service_end_s": float, "stop_travel_s": float,
}


def read_scenario(path: Union[str, Path]) -> SynthScenario:
    """Scenario from ``key=value`` text.

    ``bump = x_km, y_km, amplitude, width_km`` may repeat; ``field_base`` sets
    the background probability.  Bumps given in the file replace the default
    field.
    """
    kwargs = {}
    bumps = []
    base = None
    for key, value in parse_key_values(Path(path).read_text(encoding="utf-8")):
        try:
            if key == "bump":
                bumps.append(Bump(*(float(v) for v in value.split(","))))
            elif key == "field_base":
                base = float(value)
            elif key == "apc_noise":
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            elif key == "start_date":
                kwargs[key] = dt.date.fromisoformat(value)
            elif key in _SCENARIO_TYPES:
                kwargs[key] = _SCENARIO_TYPES[key](value)
            else:
                raise InvalidScenario(f"unknown scenario key {key!r}")
        except (TypeError, ValueError) as exc:
            raise InvalidScenario(f"{key} = {value!r}: {exc}") from None
    if bumps or base is not None:
        default = default_field()
        kwargs["fraud_field"] = FraudField(tuple(bumps) if bumps else default.bumps,
                                           default.base if base is None else base)
    return SynthScenario(**kwargs)


def radial_network(scenario: SynthScenario):
    """Station table (with projected km) and outbound station order per line."""
    s = scenario.stops_per_line
    offsets = (np.arange(s) - (s - 1) / 2) * scenario.stop_spacing_km
    rows = {}
    routes = {}
    for k in range(scenario.n_lines):
        line = f"L{k + 1}"
        theta = np.pi * k / scenario.n_lines
        order = []
        for j, t in enumerate(offsets):
            if t == 0.0:
                sid, x, y = "HUB", 0.0, 0.0
            else:
                sid, x, y = f"{line}S{j + 1:02d}", t * np.cos(theta), t * np.sin(theta)
            rows.setdefault(sid, (sid, round(float(x), 9), round(float(y), 9)))
            order.append(sid)
        routes[line] = order
    st = pd.DataFrame(list(rows.values()), columns=["station_id", "x_km", "y_km"])
    lon, lat = unproject(st["x_km"], st["y_km"], scenario.centroid)
    st["name"] = ["Hub" if sid == "HUB" else f"Stop {sid}" for sid in st["station_id"]]
    st["lon"] = np.round(lon, 9)
    st["lat"] = np.round(lat, 9)
    return st, routes


@dataclass
class SynthResult:
    stations: pd.DataFrame
    routes: pd.DataFrame
    courses: pd.DataFrame
    afc: pd.DataFrame
    apc: pd.DataFrame
    truth_occupancy: pd.DataFrame
    truth_field: pd.DataFrame
    truth_trips: pd.DataFrame

    def write(self, out_dir: Union[str, Path]) -> list[Path]:
        out = Path(out_dir)
        return [
            write_csv(self.stations[["station_id", "name", "lon", "lat"]], out / "stations.csv"),
            write_csv(self.routes, out / "routes.csv"),
            write_csv(self.courses, out / "courses.csv"),
            write_csv(self.afc, out / "afc.csv"),
            write_csv(self.apc, out / "apc.csv"),
            write_csv(self.truth_occupancy, out / "truth_occupancy.csv"),
            write_csv(self.truth_field, out / "truth_field.csv"),
            write_csv(self.truth_trips, out / "truth_trips.csv"),
        ]


def _alighting_probs(n_stops: int, spacing: float, scale: float) -> list[np.ndarray]:
    probs = [None]
    for b in range(1, n_stops):
        gaps = np.arange(1, n_stops - b + 1) * spacing
        w = np.exp(-gaps / scale)
        probs.append(w / w.sum())
    return probs


def generate(scenario: SynthScenario, out_dir: Union[str, Path, None] = None,
             network=None) -> SynthResult:
    """Simulate a network; write it to ``out_dir`` when given.

    ``network`` may replace the radial layout with ``(stations, routes)`` in
    the format returned by :func:`radial_network`.
    """
    rng = np.random.default_rng(scenario.rng_seed)
    stations, routes = network if network is not None else radial_network(scenario)
    st_xy = stations.set_index("station_id")[["x_km", "y_km"]]
    p_station = pd.Series(scenario.fraud_field(st_xy["x_km"], st_xy["y_km"]), index=st_xy.index)

    route_rows = []
    for line in sorted(routes):
        for direction, order in (("outbound", routes[line]), ("inbound", routes[line][::-1])):
            route_rows += [(line, direction, i + 1, sid) for i, sid in enumerate(order)]
    routes_df = pd.DataFrame(route_rows, columns=["line_id", "direction", "seq", "station_id"])

    n_out = (scenario.courses_per_line_per_day + 1) // 2
    n_in = scenario.courses_per_line_per_day // 2
    span = scenario.service_end_s - scenario.service_start_s
    course_rows = []
    legs = []  # (course_index, boarding_seq, alighting_seq, traveller)
    traveller = 0
    for line in sorted(routes):
        n_stops = len(routes[line])
        probs = _alighting_probs(n_stops, scenario.stop_spacing_km, scenario.trip_scale_km)
        for d in range(scenario.n_days):
            date = scenario.start_date + dt.timedelta(days=d)
            out_idx, in_idx = [], []
            for direction, count, offset, bucket in (("outbound", n_out, 0.0, out_idx),
                                                      ("inbound", n_in, 0.5, in_idx)):
                headway = span / max(count, 1)
                for k in range(count):
                    cid = f"{line}-{date:%Y%m%d}-{direction[0].upper()}{k + 1:03d}"
                    start = round(scenario.service_start_s + (k + offset) * headway)
                    bucket.append(len(course_rows))
                    course_rows.append((cid, line, direction, date.isoformat(), start, n_stops))
            for ci in out_idx:
                counts = rng.poisson(scenario.boarding_rate, size=n_stops - 1)
                for b in range(1, n_stops):
                    n = int(counts[b - 1])
                    if n == 0:
                        continue
                    a = b + 1 + rng.choice(n_stops - b, size=n, p=probs[b])
                    ids = np.arange(traveller, traveller + n)
                    traveller += n
                    legs.append((np.full(n, ci), np.full(n, b), a, ids))
                    if in_idx:
                        back = rng.choice(np.asarray(in_idx), size=n)
                        legs.append((back, n_stops + 1 - a, np.full(n, n_stops + 1 - b), ids))

    courses = pd.DataFrame(course_rows, columns=["course_id", "line_id", "direction",
                                                 "service_date", "start_time", "n_stops"])
    if legs:
        leg_course, leg_b, leg_a, leg_t = (np.concatenate(c) for c in zip(*legs))
    else:
        leg_course = leg_b = leg_a = leg_t = np.array([], dtype=int)
    order = np.lexsort((leg_t, leg_b, leg_course))
    leg_course, leg_b, leg_a, leg_t = leg_course[order], leg_b[order], leg_a[order], leg_t[order]

    route_lookup = {(l, d): list(g.sort_values("seq")["station_id"])
                    for (l, d), g in routes_df.groupby(["line_id", "direction"])}
    c_line = courses["line_id"].to_numpy()
    c_dir = courses["direction"].to_numpy()
    board_station = np.array([route_lookup[(c_line[c], c_dir[c])][b - 1]
                              for c, b in zip(leg_course, leg_b)], dtype=object)
    p_board = p_station.reindex(board_station).to_numpy() if len(board_station) else np.array([])
    fraud = rng.random(len(leg_b)) < p_board
    has_card = rng.random(traveller) < scenario.card_share
    card = np.where(has_card[leg_t], np.char.mod("C%07d", leg_t), "") if len(leg_t) else np.array([])

    cid_arr = courses["course_id"].to_numpy()
    truth_trips = pd.DataFrame({
        "traveller_id": leg_t, "card_id": card, "course_id": cid_arr[leg_course],
        "boarding_seq": leg_b, "alighting_seq": leg_a, "fraud": fraud.astype(int)})

    valid = ~fraud
    start = courses["start_time"].to_numpy()
    afc = pd.DataFrame({
        "card_id": card[valid] if len(card) else card,
        "timestamp": start[leg_course[valid]] + (leg_b[valid] - 1) * scenario.stop_travel_s,
        "course_id": cid_arr[leg_course[valid]],
        "station_id": board_station[valid]})

    truth_occ, apc = _occupancies(courses, route_lookup, leg_course, leg_b, leg_a, fraud,
                                  scenario, rng)
    tf = stations[["station_id", "x_km", "y_km"]].copy()
    tf["fraud_prob"] = p_station.reindex(tf["station_id"]).to_numpy()
    tf["oracle_rate"] = oracle_rates(tf)["oracle_rate"].to_numpy()
    result = SynthResult(stations, routes_df, courses.drop(columns="n_stops"), afc, apc,
                         truth_occ, tf, truth_trips)
    if out_dir is not None:
        result.write(out_dir)
    return result


def _occupancies(courses, route_lookup, leg_course, leg_b, leg_a, fraud, scenario, rng):
    n_courses = len(courses)
    width = int(courses["n_stops"].max()) + 1
    flat_b = leg_course * width + leg_b
    flat_a = leg_course * width + leg_a
    size = n_courses * width
    y = np.bincount(flat_b, minlength=size).reshape(n_courses, width)
    z = np.bincount(flat_a, minlength=size).reshape(n_courses, width)
    yv = np.bincount(flat_b[~fraud], minlength=size).reshape(n_courses, width)
    zv = np.bincount(flat_a[~fraud], minlength=size).reshape(n_courses, width)
    occ = np.cumsum(y - z, axis=1)
    occ_v = np.cumsum(yv - zv, axis=1)

    n_cover = int(round(scenario.coverage * n_courses))
    covered = np.zeros(n_courses, dtype=bool)
    covered[rng.choice(n_courses, size=n_cover, replace=False)] = True

    truth_rows, apc_rows = [], []
    for c, row in enumerate(courses.itertuples(index=False)):
        order = route_lookup[(row.line_id, row.direction)]
        n = row.n_stops
        noise = rng.integers(-1, 2, size=n) if (covered[c] and scenario.apc_noise) else None
        for s in range(1, n + 1):
            o, ov = int(occ[c, s]), int(occ_v[c, s])
            truth_rows.append((row.course_id, s, order[s - 1], int(y[c, s]), int(z[c, s]),
                               o, ov, o - ov))
            if covered[c]:
                o_meas = o
                if noise is not None and s < n:
                    o_meas = max(o + int(noise[s - 1]), 0)
                apc_rows.append((row.course_id, s, int(y[c, s]), int(z[c, s]), o_meas))
    truth = pd.DataFrame(truth_rows, columns=["course_id", "seq", "station_id", "boardings",
                                              "alightings", "occupancy", "ticketing_occupancy",
                                              "fraud_occupancy"])
    apc = pd.DataFrame(apc_rows, columns=["course_id", "seq", "boardings", "alightings",
                                          "occupancy_after"])
    return truth, apc


def oracle_rates(truth_field: pd.DataFrame) -> pd.DataFrame:
    """Rate an unbiased estimator converges to: ``p / (1 - p)`` per station."""
    p = truth_field["fraud_prob"].to_numpy(dtype=float)
    out = truth_field[["station_id"]].copy()
    out["fraud_prob"] = p
    out["oracle_rate"] = p / (1.0 - p)
    return out


def gaussian_field(xy, variogram: VariogramModel, rng: np.random.Generator,
                   mean: float = 0.0) -> np.ndarray:
    """One draw of a stationary Gaussian field with the given exponential variogram."""
    xy = np.asarray(xy, dtype=float)
    cov = variogram.sill * np.exp(-cdist(xy, xy) / variogram.range_km)
    cov[np.diag_indices_from(cov)] += variogram.nugget + 1e-12
    chol = np.linalg.cholesky(cov)
    return mean + chol @ rng.standard_normal(len(xy))
