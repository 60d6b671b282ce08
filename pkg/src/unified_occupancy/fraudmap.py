"""Raster of kriged fraud rates and a station layer for GIS tools."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .core import Station
from .geostat import KrigingModel, project, unproject
from .ingest import write_csv


def grid_bbox(stations: Mapping[str, Station], centroid: tuple[float, float],
              margin: float = 0.10) -> tuple[float, float, float, float]:
    """Projected station bounding box, each side widened by ``margin`` of its extent."""
    x, y = project([s.lon for s in stations.values()], [s.lat for s in stations.values()],
                   centroid)
    x0, x1, y0, y1 = float(np.min(x)), float(np.max(x)), float(np.min(y)), float(np.max(y))
    dx = (x1 - x0) * margin or 1.0
    dy = (y1 - y0) * margin or 1.0
    return x0 - dx, x1 + dx, y0 - dy, y1 + dy


def fraud_grid(model: KrigingModel, bbox: tuple[float, float, float, float],
               resolution: int = 200) -> pd.DataFrame:
    """Kriged rates at cell centres of a ``resolution`` x ``resolution`` grid.

    Returns a frame with projected ``x``, ``y`` (km), ``lon``, ``lat`` and
    ``rate`` clamped to [0, 1]; rows run x-fastest from the south-west corner.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    x0, x1, y0, y1 = bbox
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    gx, gy = np.meshgrid(xs, ys)
    rate, _ = model.predict(gx.ravel(), gy.ravel())
    lon, lat = unproject(gx.ravel(), gy.ravel(), model.centroid)
    return pd.DataFrame({"x": gx.ravel(), "y": gy.ravel(), "lon": lon, "lat": lat, "rate": rate})


def stations_geojson(stations: Mapping[str, Station], covered: Iterable[str],
                     rates: Optional[Mapping[str, float]] = None) -> dict:
    """Point features tagged ``covered`` when a mean fraud rate exists for the station."""
    covered = set(covered)
    rates = rates or {}
    features = []
    for sid in sorted(stations):
        s = stations[sid]
        props = {"station_id": sid, "name": s.name,
                 "status": "covered" if sid in covered else "uncovered"}
        if sid in rates:
            props["rate"] = round(float(rates[sid]), 10)
        features.append({"type": "Feature",
                         "geometry": {"type": "Point", "coordinates": [s.lon, s.lat]},
                         "properties": props})
    return {"type": "FeatureCollection", "features": features}


def write_fraud_map(model: KrigingModel, stations: Mapping[str, Station],
                    out_dir: Union[str, Path], resolution: int = 200, margin: float = 0.10,
                    rates: Optional[Mapping[str, float]] = None) -> tuple[list[Path], pd.DataFrame]:
    """Write ``fraudmap.csv`` and ``stations.geojson``; returns paths and the grid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = fraud_grid(model, grid_bbox(stations, model.centroid, margin), resolution)
    csv = write_csv(grid[["x", "y", "lon", "lat", "rate"]], out / "fraudmap.csv")
    covered = model.station_ids if rates is None else rates.keys()
    if rates is None and len(model.station_ids) == model.n_points:
        rates = dict(zip(model.station_ids, model.values.tolist()))
    gj = out / "stations.geojson"
    gj.write_text(json.dumps(stations_geojson(stations, covered, rates), indent=1) + "\n",
                  encoding="utf-8")
    return [csv, gj], grid
