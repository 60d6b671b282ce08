"""End-to-end unification: every course gets a total occupancy profile.

Stages run in order: O/D reconstruction, mean fraud rates on covered
courses, kriging of station rates, then ``total = ticketing * (1 + rate)``
for every course without counting cells.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .config import Config
from .core import OccupancyProfile, ProfileSource, Station
from .errors import NoCoveredCourses
from .fraud_rates import FraudRateTable, estimate_rate_table, measured_occupancies, write_rate_table
from .geostat import KrigingModel, fit_kriging, write_model
from .ingest import NetworkDataset, write_csv
from .od import reconstruct, ticketing_profiles, write_trips

logger = logging.getLogger(__name__)

MEAN_RATE = "mean_rate"
KRIGED = "kriged"


class RateResolver:
    """Station rate lookup: table entry first, kriged field otherwise.

    Kriged values for every station are computed once at construction.
    ``kriged_only`` skips the table (used when a line is held out).
    """

    def __init__(self, table: Optional[FraudRateTable], model: KrigingModel,
                 stations: Mapping[str, Station], kriged_only: bool = False):
        self.table = table
        self.model = model
        self.kriged_only = kriged_only or table is None
        ids = sorted(stations)
        pred, _ = model.predict_lonlat([stations[s].lon for s in ids],
                                       [stations[s].lat for s in ids])
        self.kriged = dict(zip(ids, pred.tolist()))

    def __call__(self, station_id: str, line_id: str, direction=None) -> tuple[float, str]:
        if not self.kriged_only:
            entry = self.table.lookup(station_id, line_id, direction)
            if entry is not None:
                return entry.rate, MEAN_RATE
        return self.kriged[station_id], KRIGED


def resolve_rate(station_id: str, line_id: str, table: FraudRateTable, kriging: KrigingModel,
                 stations: Mapping[str, Station], direction=None) -> tuple[float, str]:
    entry = table.lookup(station_id, line_id, direction)
    if entry is not None:
        return entry.rate, MEAN_RATE
    s = stations[station_id]
    pred, _ = kriging.predict_lonlat([s.lon], [s.lat])
    return float(pred[0]), KRIGED


def unify_course(ticketing: OccupancyProfile, resolver) -> OccupancyProfile:
    """Scale a ticketing profile by ``1 + rate`` at each stop."""
    key = ticketing.course
    ov = ticketing.ticketing
    rates = np.zeros(len(ov))
    sources = []
    for i, sid in enumerate(ticketing.station_ids[:-1]):
        rates[i], src = resolver(sid, key.line_id, key.direction)
        sources.append(src)
    fraud = ov * rates
    source = (ProfileSource.UNIFIED_MEAN_RATE if all(s == MEAN_RATE for s in sources)
              else ProfileSource.UNIFIED_KRIGED)
    return OccupancyProfile(key, ticketing.station_ids, ov, ticketing.alightings_ticketing,
                            ticketing.boardings_ticketing, fraud=fraud, total=ov + fraud,
                            source=source)


def measured_profile(ticketing: OccupancyProfile, measured: np.ndarray,
                     diagnostics: Optional[Counter] = None) -> OccupancyProfile:
    """Profile of an APC-covered course: the measured load is the total.

    Where reconstructed ticketing exceeds the measurement, ticketing is capped
    at the measured value so that fraud stays non-negative.
    """
    measured = np.asarray(measured, dtype=float)
    ov = np.asarray(ticketing.ticketing, dtype=float)
    capped = ov > measured
    if diagnostics is not None:
        diagnostics["ticketing_capped_at_apc"] += int(capped.sum())
    tick = np.minimum(ov, measured)
    return OccupancyProfile(ticketing.course, ticketing.station_ids, tick,
                            ticketing.alightings_ticketing, ticketing.boardings_ticketing,
                            fraud=measured - tick, total=measured,
                            source=ProfileSource.APC_MEASURED)


@dataclass
class PipelineResult:
    profiles: dict[str, OccupancyProfile]
    table: FraudRateTable
    model: KrigingModel
    trips: pd.DataFrame
    ticketing: dict[str, OccupancyProfile]
    diagnostics: Counter = field(default_factory=Counter)


def fit_models(dataset: NetworkDataset, ticketing: Mapping[str, OccupancyProfile],
               config: Optional[Config] = None, course_ids: Optional[Iterable[str]] = None,
               measured: Optional[Mapping[str, np.ndarray]] = None):
    """Rate table and kriging model learnt from the given covered courses."""
    config = config or Config()
    table = estimate_rate_table(dataset, ticketing, config, course_ids, measured)
    if not table.entries:
        raise NoCoveredCourses("covered courses produced no usable fraud ratio")
    model = fit_kriging(table.station_rates(), dataset.stations, dataset.centroid, config)
    return table, model


def run_pipeline(dataset: NetworkDataset, config: Optional[Config] = None,
                 trips: Optional[pd.DataFrame] = None) -> PipelineResult:
    config = config or Config()
    if not dataset.apc_coverage:
        raise NoCoveredCourses("no course carries APC measures on every stop; nothing to learn from")
    if trips is None:
        trips = reconstruct(dataset, config)
    ticketing = ticketing_profiles(dataset, trips)
    notes: list[str] = []
    measured = measured_occupancies(dataset, notes=notes)
    table, model = fit_models(dataset, ticketing, config, measured=measured)
    resolver = RateResolver(table, model, dataset.stations)

    diagnostics = Counter(table.diagnostics)
    diagnostics["apc_discrepancies"] = len(notes)
    profiles = {}
    for cid in sorted(dataset.courses):
        if cid in dataset.apc_coverage:
            profiles[cid] = measured_profile(ticketing[cid], measured[cid], diagnostics)
        else:
            profiles[cid] = unify_course(ticketing[cid], resolver)
    counts = Counter(p.source.value for p in profiles.values())
    logger.info("unified %d courses: %s", len(profiles), dict(sorted(counts.items())))
    return PipelineResult(profiles, table, model, trips, ticketing, diagnostics)


def profiles_frame(profiles: Mapping[str, OccupancyProfile]) -> pd.DataFrame:
    rows = []
    for cid in sorted(profiles):
        p = profiles[cid]
        for i, sid in enumerate(p.station_ids):
            rows.append((cid, i + 1, sid, p.ticketing[i], p.fraud[i], p.total[i], p.source.value))
    return pd.DataFrame(rows, columns=["course_id", "seq", "station_id", "ticketing", "fraud",
                                       "total", "source"])


def write_outputs(result: PipelineResult, out_dir: Union[str, Path]) -> list[Path]:
    out = Path(out_dir)
    paths = [
        write_csv(profiles_frame(result.profiles), out / "occupancies.csv"),
        write_rate_table(result.table, out / "fraud_rates.csv"),
        write_trips(result.trips, out / "trips.csv"),
    ]
    paths += write_model(result.model, out)
    return paths
