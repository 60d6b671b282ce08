from __future__ import annotations

from pathlib import Path

import pandas as pd
import pytest

from unified_occupancy.config import Config
from unified_occupancy.ingest import load_network
from unified_occupancy.synth import SynthScenario, generate

# three stations about 1 km apart along a meridian
STATIONS = [("A", "Alpha", 5.0, 47.00), ("B", "Bravo", 5.0, 47.01), ("C", "Charlie", 5.0, 47.02)]


def write_network(root: Path, *, stations=None, routes=None, courses=None, afc=None, apc=None):
    """Write a small network; every table defaults to a 1-line, 3-stop layout."""
    root.mkdir(parents=True, exist_ok=True)
    stations = stations if stations is not None else pd.DataFrame(
        STATIONS, columns=["station_id", "name", "lon", "lat"])
    if routes is None:
        rows = []
        for direction, order in (("outbound", "ABC"), ("inbound", "CBA")):
            rows += [("L1", direction, i + 1, s) for i, s in enumerate(order)]
        routes = pd.DataFrame(rows, columns=["line_id", "direction", "seq", "station_id"])
    if courses is None:
        courses = pd.DataFrame([("c1", "L1", "outbound", "2024-03-04", 28800),
                                ("c2", "L1", "inbound", "2024-03-04", 30600)],
                               columns=["course_id", "line_id", "direction", "service_date",
                                        "start_time"])
    if afc is None:
        afc = pd.DataFrame(columns=["card_id", "timestamp", "course_id", "station_id"])
    tables = {"stations": stations, "routes": routes, "courses": courses, "afc": afc}
    if apc is not None:
        tables["apc"] = apc
    for name, df in tables.items():
        df.to_csv(root / f"{name}.csv", index=False)
    return root


def afc_frame(rows):
    return pd.DataFrame(rows, columns=["card_id", "timestamp", "course_id", "station_id"])


def apc_frame(rows):
    return pd.DataFrame(rows, columns=["course_id", "seq", "boardings", "alightings",
                                       "occupancy_after"])


SMALL = SynthScenario(n_lines=3, stops_per_line=9, courses_per_line_per_day=12, n_days=5,
                      boarding_rate=6.0, coverage=0.4, rng_seed=7)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A generated small network (files on disk, truth included) and its loaded dataset."""
    root = tmp_path_factory.mktemp("small_synth")
    result = generate(SMALL, root)
    return root, result, load_network(root, Config())
