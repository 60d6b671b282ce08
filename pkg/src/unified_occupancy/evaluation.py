"""Error metric, contextual-average baseline and evaluation protocols.

Three protocols compare reconstructed against APC-measured occupancy:

* ``holdout_30``: a seeded 30% of covered courses lose their counts, the
  rate model is refitted on the rest and the held-out courses are unified.
* ``leave_line_out``: each covered line in turn is reconstructed from a
  kriging model fitted on the other lines only.
* ``coverage_sweep``: courses of one line are un-covered one at a time and
  the error on the removed courses is tracked against remaining coverage.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from .config import Config
from .core import CourseKey
from .errors import NoCoveredCourses, NotCoveredEnough, TooFewLines, ZeroReference
from .fraud_rates import measured_occupancies
from .ingest import NetworkDataset, write_csv
from .od import reconstruct, ticketing_profiles
from .unify import RateResolver, fit_models, unify_course

logger = logging.getLogger(__name__)

MEAN_RATE = "mean_rate"
KRIGED = "kriged"
CONTEXTUAL = "contextual_average"
REPORT_COLUMNS = ["method", "scope", "wMAPE", "n_entries"]


def wmape(reference, estimate) -> float:
    """Weighted MAPE ``sum|O - O_est| / sum|O|``.

    Both arguments may be arrays of any matching shape, or sequences of
    per-course vectors (ragged allowed) with matching lengths.
    """
    ref = _flatten(reference)
    est = _flatten(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    denom = np.abs(ref).sum()
    if denom == 0:
        raise ZeroReference("reference occupancies sum to zero")
    return float(np.abs(ref - est).sum() / denom)


def _flatten(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(float).ravel()
    items = list(x)
    if items and np.ndim(items[0]) > 0:
        return np.concatenate([np.asarray(i, dtype=float).ravel() for i in items])
    return np.asarray(items, dtype=float).ravel()


# ---------------------------------------------------------------- baseline

class ContextKey(NamedTuple):
    line_id: str
    direction: str
    station_id: str
    day_of_week: int
    quarter_hour_of_day: int


def quarter_hour(start_time_s: float) -> int:
    """Quarter-hour slot of a time of day, rounded to the nearest slot."""
    return int(math.floor(start_time_s / 900.0 + 0.5)) % 96


def context_keys(key: CourseKey, station_ids: Iterable[str]) -> list[ContextKey]:
    dow = key.service_date.weekday()
    qh = quarter_hour(key.start_time)
    d = key.direction.value
    return [ContextKey(key.line_id, d, sid, dow, qh) for sid in station_ids]


class _Unpredictable:
    """Marker returned when no training course shares even (line, direction, station)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Unpredictable"

    def __bool__(self):
        return False


Unpredictable = _Unpredictable()

# fallback levels, most specific first: fields of ContextKey kept at each level
LEVELS = (
    ("full", (0, 1, 2, 3, 4)),
    ("no_quarter_hour", (0, 1, 2, 3)),
    ("no_day_of_week", (0, 1, 2, 4)),
    ("line_direction_station", (0, 1, 2)),
)


@dataclass
class ContextualEstimate:
    occupancy: np.ndarray
    levels: tuple[str, ...]


class ContextualAverage:
    """Mean measured occupancy of training courses sharing a context.

    On a miss at the full key the quarter-hour is dropped, then the day of
    week instead, then both.  The level used at each stop is recorded.
    """

    def __init__(self, sums: list[dict], counts: list[dict]):
        self._sums = sums
        self._counts = counts
        self.level_counts: Counter = Counter()

    @classmethod
    def fit(cls, courses: Mapping[str, tuple[CourseKey, tuple, np.ndarray]]) -> "ContextualAverage":
        """``courses`` maps course id to (key, station ids, measured occupancy)."""
        sums = [defaultdict(float) for _ in LEVELS]
        counts = [defaultdict(int) for _ in LEVELS]
        for cid in sorted(courses):
            key, sids, occ = courses[cid]
            for ck, o in zip(context_keys(key, sids), np.asarray(occ, dtype=float)):
                for k, (_, fields) in enumerate(LEVELS):
                    sub = tuple(ck[f] for f in fields)
                    sums[k][sub] += o
                    counts[k][sub] += 1
        return cls([dict(s) for s in sums], [dict(c) for c in counts])

    def predict(self, key: CourseKey, station_ids) -> Union[ContextualEstimate, _Unpredictable]:
        out = np.zeros(len(station_ids))
        levels = []
        for i, ck in enumerate(context_keys(key, station_ids)):
            for k, (name, fields) in enumerate(LEVELS):
                sub = tuple(ck[f] for f in fields)
                n = self._counts[k].get(sub)
                if n:
                    out[i] = self._sums[k][sub] / n
                    levels.append(name)
                    break
            else:
                return Unpredictable
        for name in levels:
            self.level_counts[name] += 1
        if any(name != "full" for name in levels):
            logger.debug("contextual average for %s used fallback levels %s", key.course_id,
                         sorted(set(levels)))
        return ContextualEstimate(out, tuple(levels))


def contextual_average(train: Mapping[str, tuple[CourseKey, tuple, np.ndarray]],
                       query_key: CourseKey, station_ids):
    """One-shot convenience around :class:`ContextualAverage`."""
    return ContextualAverage.fit(train).predict(query_key, station_ids)


# ----------------------------------------------------------------- reports

@dataclass
class EvalReport:
    rows: list[tuple] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    per_course: dict = field(default_factory=dict)

    def add(self, method: str, scope: str, ref: list, est: list):
        n = int(sum(len(r) for r in ref))
        try:
            value = wmape(ref, est) if n else float("nan")
        except ZeroReference:
            value = float("nan")
        self.rows.append((method, scope, value, n))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def value(self, method: str, scope: str = "network") -> float:
        for m, s, v, _ in self.rows:
            if m == method and s == scope:
                return v
        raise KeyError((method, scope))


def write_report(report: EvalReport, path: Union[str, Path]) -> Path:
    return write_csv(report.to_frame(), path)


class _Context:
    """Ticketing and measured occupancies shared by the protocols."""

    def __init__(self, dataset: NetworkDataset, config: Config, trips: Optional[pd.DataFrame]):
        if not dataset.apc_coverage:
            raise NoCoveredCourses("no course carries APC measures on every stop")
        self.dataset = dataset
        self.config = config
        self.trips = reconstruct(dataset, config) if trips is None else trips
        self.ticketing = ticketing_profiles(dataset, self.trips)
        self.measured = measured_occupancies(dataset)
        self.covered = sorted(dataset.apc_coverage)

    def train_set(self, ids) -> dict:
        c = self.dataset.courses
        return {cid: (c[cid].key, c[cid].station_ids, self.measured[cid]) for cid in ids}

    def fit(self, ids):
        return fit_models(self.dataset, self.ticketing, self.config, course_ids=ids,
                          measured=self.measured)

    def unify(self, ids, resolver) -> dict[str, np.ndarray]:
        return {cid: unify_course(self.ticketing[cid], resolver).total for cid in ids}

    def line_of(self, cid: str) -> str:
        return self.dataset.courses[cid].key.line_id


def holdout_split(dataset: NetworkDataset, seed: int, fraction: float = 0.3):
    """Seeded split of covered courses into (training ids, held-out ids)."""
    covered = sorted(dataset.apc_coverage)
    rng = np.random.default_rng(seed)
    n_hold = int(round(fraction * len(covered)))
    held = set(rng.choice(len(covered), size=n_hold, replace=False).tolist())
    train = [c for i, c in enumerate(covered) if i not in held]
    test = [c for i, c in enumerate(covered) if i in held]
    return train, test


def holdout_30(dataset: NetworkDataset, seed: Optional[int] = None,
               config: Optional[Config] = None, trips: Optional[pd.DataFrame] = None,
               fraction: float = 0.3) -> EvalReport:
    """Hold out a seeded share of covered courses and compare both methods on them.

    Lines whose covered courses are all held out are reported as skipped.
    Courses the baseline cannot predict are left out of both methods' scores
    so the two are compared on identical entries.
    """
    config = config or Config()
    seed = config.rng_seed if seed is None else seed
    ctx = _Context(dataset, config, trips)
    train, held = holdout_split(dataset, seed, fraction)
    if not train:
        raise NoCoveredCourses("hold-out leaves no covered course to train on")
    train_lines = {ctx.line_of(c) for c in train}
    skipped = sorted({ctx.line_of(c) for c in held} - train_lines)
    held = [c for c in held if ctx.line_of(c) in train_lines]

    table, model = ctx.fit(train)
    resolver = RateResolver(table, model, dataset.stations)
    est = ctx.unify(held, resolver)
    baseline = ContextualAverage.fit(ctx.train_set(train))
    base = {}
    for cid in held:
        c = dataset.courses[cid]
        pred = baseline.predict(c.key, c.station_ids)
        if pred is not Unpredictable:
            base[cid] = pred.occupancy
    scored = [c for c in held if c in base]
    if len(scored) < len(held):
        logger.info("%d held-out courses unpredictable by the baseline", len(held) - len(scored))

    report = EvalReport(skipped=skipped)
    _add_rows(report, ctx, scored, {MEAN_RATE: est, CONTEXTUAL: base})
    for line in skipped:
        report.rows.append((MEAN_RATE, f"line:{line}", float("nan"), 0))
        report.rows.append((CONTEXTUAL, f"line:{line}", float("nan"), 0))
    report.rows.sort(key=lambda r: (r[1] != "network", r[1], r[0]))
    return report


def _add_rows(report: EvalReport, ctx: _Context, ids: list, methods: dict):
    by_line = defaultdict(list)
    for cid in ids:
        by_line[ctx.line_of(cid)].append(cid)
    for method, est in methods.items():
        report.add(method, "network", [ctx.measured[c] for c in ids], [est[c] for c in ids])
        for line in sorted(by_line):
            cs = by_line[line]
            report.add(method, f"line:{line}", [ctx.measured[c] for c in cs], [est[c] for c in cs])
        report.per_course[method] = {c: est[c] for c in ids}


def leave_line_out(dataset: NetworkDataset, config: Optional[Config] = None,
                   trips: Optional[pd.DataFrame] = None, seed: Optional[int] = None,
                   folds: int = 10) -> EvalReport:
    """Reconstruct each covered line from a kriging model of the other lines.

    The baseline is scored on the same courses by ``folds``-fold cross-fitting
    over the line's covered courses: each fold is predicted from every other
    covered course, including the rest of its own line.
    """
    config = config or Config()
    seed = config.rng_seed if seed is None else seed
    ctx = _Context(dataset, config, trips)
    by_line = defaultdict(list)
    for cid in ctx.covered:
        by_line[ctx.line_of(cid)].append(cid)
    if len(by_line) < 2:
        raise TooFewLines(f"{len(by_line)} covered line(s); leave-line-out needs at least 2")

    rng = np.random.default_rng(seed)
    kriged, base = {}, {}
    for line in sorted(by_line):
        others = [c for c in ctx.covered if ctx.line_of(c) != line]
        table, model = ctx.fit(others)
        resolver = RateResolver(table, model, dataset.stations, kriged_only=True)
        kriged.update(ctx.unify(by_line[line], resolver))

        ids = by_line[line]
        fold_of = rng.permutation(len(ids)) % max(1, min(folds, len(ids)))
        for f in np.unique(fold_of):
            test = [c for c, k in zip(ids, fold_of) if k == f]
            if len(ids) == 1:
                train = others
            else:
                test_set = set(test)
                train = [c for c in ctx.covered if c not in test_set]
            baseline = ContextualAverage.fit(ctx.train_set(train))
            for cid in test:
                c = dataset.courses[cid]
                pred = baseline.predict(c.key, c.station_ids)
                if pred is not Unpredictable:
                    base[cid] = pred.occupancy

    scored = [c for c in ctx.covered if c in base]
    report = EvalReport()
    _add_rows(report, ctx, scored, {KRIGED: kriged, CONTEXTUAL: base})
    report.rows.sort(key=lambda r: (r[1] != "network", r[1], r[0]))
    return report


def coverage_sweep(dataset: NetworkDataset, line_id: str, step: int = 1,
                   seed: Optional[int] = None, config: Optional[Config] = None,
                   trips: Optional[pd.DataFrame] = None,
                   min_coverage: float = 0.9) -> pd.DataFrame:
    """Error on removed courses as covered courses of one line are removed.

    Courses are removed ``step`` at a time in seeded random order, down to a
    single remaining covered course.  Each point refits the rate model on
    every still-covered course of the network.

    Returns
    -------
    DataFrame with ``coverage`` (share of the line's courses still covered),
    ``wmape``, ``n_covered`` and ``n_removed``.
    """
    config = config or Config()
    seed = config.rng_seed if seed is None else seed
    if step < 1:
        raise ValueError("step must be >= 1")
    line_courses = sorted(c for c, course in dataset.courses.items()
                          if course.key.line_id == line_id)
    covered = [c for c in line_courses if c in dataset.apc_coverage]
    if not line_courses or len(covered) < 2 or len(covered) < min_coverage * len(line_courses):
        raise NotCoveredEnough(
            f"line {line_id!r}: {len(covered)} of {len(line_courses)} courses covered; "
            f"the sweep needs at least 2 and {min_coverage:.0%}")
    ctx = _Context(dataset, config, trips)
    order = [covered[i] for i in np.random.default_rng(seed).permutation(len(covered))]
    others = [c for c in ctx.covered if ctx.line_of(c) != line_id]

    rows = []
    for k in range(step, len(covered), step):
        removed, kept = order[:k], order[k:]
        table, model = ctx.fit(sorted(others + kept))
        resolver = RateResolver(table, model, dataset.stations)
        est = ctx.unify(removed, resolver)
        err = wmape([ctx.measured[c] for c in removed], [est[c] for c in removed])
        rows.append((len(kept) / len(line_courses), err, len(kept), k))
    return pd.DataFrame(rows, columns=["coverage", "wmape", "n_covered", "n_removed"])


def write_sweep(sweep: pd.DataFrame, path: Union[str, Path]) -> Path:
    return write_csv(sweep[["coverage", "wmape"]], path)
