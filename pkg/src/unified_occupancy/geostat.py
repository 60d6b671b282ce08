"""Empirical variogram, exponential model fit and ordinary kriging.

Distances are planar kilometres in a local equirectangular projection
around the network centroid.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist, pdist

from .config import Config
from .core import Station
from .errors import DegenerateVariogram, SingularSystem, TooFewPoints
from .ingest import write_csv

logger = logging.getLogger(__name__)

KM_PER_DEG_LON = 111.32
KM_PER_DEG_LAT = 110.57


def project(lon, lat, centroid: tuple[float, float]):
    """Local equirectangular projection to kilometres east/north of ``centroid``."""
    lon0, lat0 = centroid
    x = (np.asarray(lon, dtype=float) - lon0) * np.cos(np.radians(lat0)) * KM_PER_DEG_LON
    y = (np.asarray(lat, dtype=float) - lat0) * KM_PER_DEG_LAT
    return x, y


def unproject(x, y, centroid: tuple[float, float]):
    lon0, lat0 = centroid
    lon = lon0 + np.asarray(x, dtype=float) / (np.cos(np.radians(lat0)) * KM_PER_DEG_LON)
    lat = lat0 + np.asarray(y, dtype=float) / KM_PER_DEG_LAT
    return lon, lat


@dataclass(frozen=True)
class VariogramModel:
    """Exponential variogram ``nugget + sill * (1 - exp(-h / range_km))``."""

    nugget: float
    sill: float
    range_km: float
    degenerate: bool = False

    def __post_init__(self):
        if self.nugget < 0 or self.sill < 0:
            raise ValueError("nugget and sill must be non-negative")
        if not self.range_km > 0:
            raise ValueError("range_km must be positive")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return self.nugget + self.sill * (1.0 - np.exp(-h / self.range_km))

    def kriging_gamma(self, h):
        """Semivariance used in the kriging system: exactly zero at zero lag."""
        h = np.asarray(h, dtype=float)
        return np.where(h == 0.0, 0.0, self(h))


class VariogramBin(NamedTuple):
    h_mid: float
    gamma: float
    pair_count: int


def empirical_variogram(xy, values, n_bins: int = 12,
                        max_dist_km: Optional[float] = None) -> list[VariogramBin]:
    """Matheron estimator on equal-width distance bins; empty bins are dropped.

    ``max_dist_km`` defaults to half the largest pairwise distance.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(v)}")
    d = pdist(xy)
    sq = pdist(v[:, None], "sqeuclidean")
    if max_dist_km is None:
        max_dist_km = 0.5 * d.max()
    if not max_dist_km > 0:
        raise TooFewPoints("all points share one location")
    edges = np.linspace(0.0, max_dist_km, n_bins + 1)
    keep = d <= max_dist_km
    idx = np.clip(np.digitize(d[keep], edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=sq[keep], minlength=n_bins)
    out = []
    for k in range(n_bins):
        if counts[k]:
            out.append(VariogramBin(0.5 * (edges[k] + edges[k + 1]),
                                    sums[k] / (2.0 * counts[k]), int(counts[k])))
    return out


def _nnls2(g: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Weighted least squares of ``y ~ a + b*g`` with ``a, b >= 0``.

    Returns ``(a, b, sse)``; the optimum lies in the interior or on one of the
    faces, so all four cases are compared.
    """
    def sse(a, b):
        r = y - a - b * g
        return float(np.sum(w * r * r))

    sw, sg, sgg = w.sum(), (w * g).sum(), (w * g * g).sum()
    sy, sgy = (w * y).sum(), (w * g * y).sum()
    cands = [(0.0, 0.0)]
    det = sw * sgg - sg * sg
    if det > 1e-14 * max(sw * sgg, 1e-300):
        a = (sgg * sy - sg * sgy) / det
        b = (sw * sgy - sg * sy) / det
        if a >= 0 and b >= 0:
            cands.append((a, b))
    if sw > 0:
        cands.append((max(sy / sw, 0.0), 0.0))
    if sgg > 0:
        cands.append((0.0, max(sgy / sgg, 0.0)))
    best = min(cands, key=lambda ab: sse(*ab))
    return best[0], best[1], sse(*best)


def fit_exponential(bins: Sequence[VariogramBin],
                    max_dist_km: Optional[float] = None) -> VariogramModel:
    """Weighted least-squares fit of the exponential model to empirical bins.

    Weights are the pair counts.  The range is confined to
    ``[0.1, 10] * max_dist_km``.  A 5x5x5 grid picks the starting range; the
    nugget and sill are then profiled out exactly (non-negative linear least
    squares) and the remaining one-dimensional problem in the range is solved
    with a bounded Brent search in log-range.
    """
    h = np.array([b.h_mid for b in bins], dtype=float)
    y = np.array([b.gamma for b in bins], dtype=float)
    w = np.array([b.pair_count for b in bins], dtype=float)
    if max_dist_km is None:
        max_dist_km = float(h.max()) if len(h) else 1.0
    if len(bins) == 0 or np.all(y == 0):
        warnings.warn("all empirical semivariances are zero; using a pure-nugget model",
                      DegenerateVariogram, stacklevel=2)
        return VariogramModel(0.0, 0.0, max_dist_km, degenerate=True)
    if len(bins) < 3:
        raise TooFewPoints(f"need at least 3 populated bins, got {len(bins)}")

    lo, hi = 0.1 * max_dist_km, 10.0 * max_dist_km

    def sse(n, s, r):
        res = y - n - s * (1.0 - np.exp(-h / r))
        return float(np.sum(w * res * res))

    top = float(y.max())
    grid = [(sse(n, s, r), n, s, r)
            for r in np.geomspace(lo, hi, 5)
            for n in np.linspace(0.0, top, 5)
            for s in np.linspace(0.0, top, 5)]
    r0 = min(grid)[3]

    def profiled(log_r):
        return _nnls2(1.0 - np.exp(-h / np.exp(log_r)), y, w)[2]

    # dense scan guards against a multimodal profile before the local search
    scan = np.union1d(np.linspace(np.log(lo), np.log(hi), 201), [np.log(r0)])
    vals = np.array([profiled(t) for t in scan])
    k = int(np.argmin(vals))
    a, b = scan[max(k - 1, 0)], scan[min(k + 1, len(scan) - 1)]
    best_t, best_v = scan[k], vals[k]
    if b > a:
        res = minimize_scalar(profiled, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        if res.fun <= best_v:
            best_t, best_v = float(res.x), float(res.fun)
    r = float(np.exp(best_t))
    n, s, _ = _nnls2(1.0 - np.exp(-h / r), y, w)
    return VariogramModel(float(n), float(s), r)


def _dedupe(xy: np.ndarray, values: np.ndarray):
    """Merge points sharing identical coordinates (values averaged)."""
    keys, inverse = np.unique(xy, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.bincount(inverse, weights=values, minlength=len(keys))
    counts = np.bincount(inverse, minlength=len(keys))
    return keys, sums / counts


@dataclass
class KrigingModel:
    """Ordinary kriging predictor over fixed training points.

    ``xy`` are projected kilometres relative to ``centroid`` (lon, lat).
    """

    xy: np.ndarray
    values: np.ndarray
    variogram: VariogramModel
    centroid: tuple[float, float] = (0.0, 0.0)
    station_ids: tuple = ()
    _lu: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) < 1:
            raise TooFewPoints("kriging needs at least one training point")
        if len(np.unique(self.xy, axis=0)) != len(self.xy):
            self.xy, self.values = _dedupe(self.xy, self.values)
            self.station_ids = ()
        self._factorize()

    @property
    def n_points(self) -> int:
        return len(self.values)

    @property
    def _flat(self) -> bool:
        return self.variogram.nugget + self.variogram.sill == 0.0

    def _matrix(self) -> np.ndarray:
        n = self.n_points
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = self.variogram.kriging_gamma(cdist(self.xy, self.xy))
        a[:n, n] = 1.0
        a[n, :n] = 1.0
        return a

    def _factorize(self, retried: bool = False):
        if self._flat:
            self._lu = None
            return
        a = self._matrix()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu, piv = lu_factor(a)
        diag = np.abs(np.diag(lu))
        if not np.all(np.isfinite(lu)) or diag.min() <= 1e-13 * max(diag.max(), 1e-300):
            if retried:
                raise SingularSystem("ordinary kriging system is singular")
            self.xy, self.values = _dedupe(self.xy, self.values)
            return self._factorize(retried=True)
        self._lu = (lu, piv)

    def weights(self, qx, qy) -> tuple[np.ndarray, np.ndarray]:
        """Kriging weights (n_points x n_queries) and Lagrange multipliers."""
        q = np.column_stack([np.atleast_1d(qx), np.atleast_1d(qy)]).astype(float)
        n = self.n_points
        if self._lu is None:
            return np.full((n, len(q)), 1.0 / n), np.zeros(len(q))
        rhs = np.ones((n + 1, len(q)))
        rhs[:n] = self.variogram.kriging_gamma(cdist(self.xy, q))
        sol = lu_solve(self._lu, rhs)
        return sol[:n], sol[n]

    def predict(self, qx, qy, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
        """Predicted values clamped to [0, 1] and kriging variances."""
        qx = np.atleast_1d(np.asarray(qx, dtype=float))
        qy = np.atleast_1d(np.asarray(qy, dtype=float))
        pred = np.empty(len(qx))
        var = np.empty(len(qx))
        for start in range(0, len(qx), chunk):
            sl = slice(start, start + chunk)
            w, mu = self.weights(qx[sl], qy[sl])
            pred[sl] = self.values @ w
            if self._lu is None:
                var[sl] = 0.0
            else:
                g0 = self.variogram.kriging_gamma(cdist(self.xy, np.column_stack([qx[sl], qy[sl]])))
                var[sl] = np.sum(w * g0, axis=0) + mu
        return np.clip(pred, 0.0, 1.0), var

    def predict_lonlat(self, lon, lat):
        x, y = project(lon, lat, self.centroid)
        return self.predict(x, y)


def krige(model: KrigingModel, x: float, y: float) -> tuple[float, float]:
    """Prediction and kriging variance at one projected location."""
    pred, var = model.predict([x], [y])
    return float(pred[0]), float(var[0])


def training_points(station_rates: dict[str, float], stations: dict[str, Station],
                    centroid: tuple[float, float]):
    """Projected coordinates, clipped values and ids for stations with a rate."""
    ids = sorted(station_rates)
    lon = [stations[s].lon for s in ids]
    lat = [stations[s].lat for s in ids]
    x, y = project(lon, lat, centroid)
    values = np.minimum(np.array([station_rates[s] for s in ids], dtype=float), 1.0)
    return np.column_stack([x, y]), values, tuple(ids)


def fit_kriging(station_rates: dict[str, float], stations: dict[str, Station],
                centroid: tuple[float, float], config: Optional[Config] = None) -> KrigingModel:
    """Fit the variogram to station rates and build the kriging model.

    With too little data for a variogram (one location or fewer than three
    populated bins) a flat model is used, which predicts the training mean
    away from the training locations.
    """
    config = config or Config()
    if not station_rates:
        raise TooFewPoints("no station rates to krige from")
    xy, values, ids = training_points(station_rates, stations, centroid)
    uxy, uvals = _dedupe(xy, values)
    model = None
    if len(uvals) >= 2:
        diameter = float(pdist(uxy).max())
        max_dist = config.variogram_max_dist_fraction * diameter
        bins = empirical_variogram(uxy, uvals, config.variogram_bins, max_dist)
        if len(bins) >= 3 or all(b.gamma == 0 for b in bins):
            model = fit_exponential(bins, max_dist)
    if model is None:
        spread = float(np.var(uvals)) if len(uvals) > 1 else 0.0
        scale = float(pdist(uxy).max()) if len(uvals) > 1 else 1.0
        model = VariogramModel(spread, 0.0, scale, degenerate=True)
    logger.info("variogram nugget=%.4g sill=%.4g range=%.3g km", model.nugget, model.sill,
                model.range_km)
    return KrigingModel(xy, values, model, centroid, ids)


def rates_for_uncovered_stations(model: KrigingModel,
                                 stations: Iterable[Station]) -> dict[str, float]:
    stations = list(stations)
    if not stations:
        return {}
    pred, _ = model.predict_lonlat([s.lon for s in stations], [s.lat for s in stations])
    return {s.station_id: float(p) for s, p in zip(stations, pred)}


def write_model(model: KrigingModel, out_dir: Union[str, Path]) -> list[Path]:
    out = Path(out_dir)
    v = model.variogram
    vario = pd.DataFrame([{"nugget": v.nugget, "sill": v.sill, "range_km": v.range_km,
                           "degenerate": int(v.degenerate), "centroid_lon": model.centroid[0],
                           "centroid_lat": model.centroid[1]}])
    lon, lat = unproject(model.xy[:, 0], model.xy[:, 1], model.centroid)
    ids = model.station_ids if len(model.station_ids) == model.n_points else [""] * model.n_points
    pts = pd.DataFrame({"station_id": list(ids), "lon": lon, "lat": lat, "x_km": model.xy[:, 0],
                        "y_km": model.xy[:, 1], "value": model.values})
    return [write_csv(vario, out / "variogram.csv"), write_csv(pts, out / "training_points.csv")]


def read_model(out_dir: Union[str, Path]) -> KrigingModel:
    out = Path(out_dir)
    v = pd.read_csv(out / "variogram.csv").iloc[0]
    pts = pd.read_csv(out / "training_points.csv", dtype={"station_id": str}, keep_default_na=False)
    vario = VariogramModel(float(v["nugget"]), float(v["sill"]), float(v["range_km"]),
                           bool(v.get("degenerate", 0)))
    ids = tuple(pts["station_id"]) if all(pts["station_id"]) else ()
    return KrigingModel(pts[["x_km", "y_km"]].to_numpy(), pts["value"].to_numpy(), vario,
                        (float(v["centroid_lon"]), float(v["centroid_lat"])), ids)
