import json

import numpy as np
import pandas as pd
import pytest

from unified_occupancy.core import Station
from unified_occupancy.fraudmap import fraud_grid, grid_bbox, stations_geojson, write_fraud_map
from unified_occupancy.geostat import KrigingModel, VariogramModel, fit_kriging
from unified_occupancy.plotting import plot_eval_report, plot_fraud_map, plot_profile, plot_sweep
from unified_occupancy.synth import SynthScenario, radial_network


def radial_stations():
    st, _ = radial_network(SynthScenario())
    return {r.station_id: Station(r.station_id, r.name, r.lon, r.lat) for r in st.itertuples()}


def test_single_point_uniform_grid():
    m = KrigingModel(np.array([[0.0, 0.0]]), np.array([0.2]), VariogramModel(0.0, 0.1, 1.0))
    grid = fraud_grid(m, (-3, 3, -2, 2), 20)
    assert len(grid) == 400
    np.testing.assert_allclose(grid["rate"], 0.2)


def test_bbox_inflated():
    stations = {"a": Station("a", "a", 5.0, 47.0), "b": Station("b", "b", 5.1, 47.1)}
    x0, x1, y0, y1 = grid_bbox(stations, (5.0, 47.0), 0.10)
    width = 0.1 * np.cos(np.radians(47.0)) * 111.32
    assert x0 == pytest.approx(-0.1 * width) and x1 == pytest.approx(1.1 * width)
    assert y1 - y0 == pytest.approx(1.2 * 0.1 * 110.57)


def test_cell_at_covered_station_interpolates():
    stations = radial_stations()
    st, _ = radial_network(SynthScenario())
    field = SynthScenario().fraud_field
    rates = dict(zip(st["station_id"], field(st["x_km"], st["y_km"]) * 1.0))
    m = fit_kriging(rates, stations, (5.0, 47.0))
    # the network is symmetric about the hub, so an odd resolution puts a cell centre on it
    grid = fraud_grid(m, grid_bbox(stations, m.centroid), 201)
    centre = grid.iloc[(grid["x"] ** 2 + grid["y"] ** 2).idxmin()]
    assert abs(centre["x"]) < 1e-6 and abs(centre["y"]) < 1e-6
    assert centre["rate"] == pytest.approx(min(rates["HUB"], 1.0), abs=1e-6)
    assert grid["rate"].between(0, 1).all()


def test_geojson_tags():
    stations = {"a": Station("a", "A", 5.0, 47.0), "b": Station("b", "B", 5.1, 47.1)}
    gj = stations_geojson(stations, ["a"], {"a": 0.12})
    props = {f["properties"]["station_id"]: f["properties"] for f in gj["features"]}
    assert props["a"]["status"] == "covered" and props["a"]["rate"] == 0.12
    assert props["b"]["status"] == "uncovered" and "rate" not in props["b"]
    assert gj["features"][1]["geometry"]["coordinates"] == [5.1, 47.1]


def test_write_and_plot(tmp_path):
    stations = radial_stations()
    covered = sorted(stations)[:10]
    m = fit_kriging({s: 0.01 * k for k, s in enumerate(covered)}, stations, (5.0, 47.0))
    paths, grid = write_fraud_map(m, stations, tmp_path, resolution=30)
    assert [p.name for p in paths] == ["fraudmap.csv", "stations.geojson"]
    tags = [f["properties"]["status"] for f in
            json.loads((tmp_path / "stations.geojson").read_text())["features"]]
    assert tags.count("covered") == 10
    png = plot_fraud_map(grid, stations, covered, tmp_path / "map.png", m.centroid)
    assert png.read_bytes()[:4] == b"\x89PNG"

    sweep = pd.DataFrame({"coverage": [0.9, 0.5, 0.1], "wmape": [0.1, 0.12, 0.2]})
    assert plot_sweep(sweep, tmp_path / "sweep.png").exists()
    report = pd.DataFrame([("a", "network", 0.1, 5), ("b", "network", 0.2, 5),
                           ("a", "line:L1", np.nan, 0)], columns=["method", "scope", "wMAPE",
                                                                  "n_entries"])
    assert plot_eval_report(report, tmp_path / "eval.png").exists()


def test_plot_profile(tmp_path, small_synth):
    _, _, ds = small_synth
    from unified_occupancy.unify import run_pipeline
    result = run_pipeline(ds)
    cid = sorted(result.profiles)[0]
    assert plot_profile(result.profiles[cid], tmp_path / "p.png").exists()
