import filecmp

import pandas as pd
import pytest

from conftest import afc_frame, apc_frame, write_network
from unified_occupancy.config import Config, load_config, parse_key_values
from unified_occupancy.errors import EmptyDataset, ReferentialError, SchemaError
from unified_occupancy.ingest import coverage_summary, load_network, save_dataset
from unified_occupancy.synth import SynthScenario, generate

FIVE = afc_frame([("k1", 28800, "c1", "A"), ("k2", 28800, "c1", "A"), ("", 28900, "c1", "B"),
                  ("k1", 30600, "c2", "C"), ("k3", 30700, "c2", "B")])


def test_minimal_fixture(tmp_path):
    ds = load_network(write_network(tmp_path, afc=FIVE))
    assert len(ds.courses) == 2
    assert sum(s.boardings_afc for c in ds.courses.values() for s in c.stops) == 5
    assert [s.boardings_afc for s in ds.courses["c1"].stops] == [2, 1, 0]
    assert not ds.rejects
    assert ds.validations["card_id"].isna().sum() == 1


def test_unknown_station_row_rejected(tmp_path):
    afc = pd.concat([FIVE, afc_frame([("k9", 28900, "c1", "ZZ")])])
    ds = load_network(write_network(tmp_path, afc=afc))
    assert len(ds.validations) == 5
    assert [r.error for r in ds.rejects] == ["ReferentialError"]
    assert ds.rejects[0].file == "afc"


def test_reject_reasons(tmp_path):
    afc = afc_frame([("k1", 28800, "c1", "A"),
                     ("k1", 28800, "c1", "C"),       # boarding at the last stop
                     ("k1", 28800, "nope", "A"),     # unknown course
                     ("k1", 10000, "c1", "A")])      # far outside the schedule window
    log = tmp_path / "rejects.csv"
    ds = load_network(write_network(tmp_path, afc=afc), Config(reject_log_path=str(log)))
    assert len(ds.validations) == 1
    assert len(ds.rejects) == 3
    assert len(pd.read_csv(log)) == 3


def test_partial_apc_not_covered(tmp_path):
    apc = apc_frame([("c1", 1, "", "", 3), ("c1", 2, "", "", 2),
                     ("c2", 1, "", "", 1), ("c2", 2, "", "", 1), ("c2", 3, "", "", 0)])
    ds = load_network(write_network(tmp_path, afc=FIVE, apc=apc))
    assert ds.apc_coverage == frozenset({"c2"})


def test_every_course_matches_route(small_synth):
    _, _, ds = small_synth
    for course in ds.courses.values():
        assert course.station_ids == ds.routes[(course.key.line_id, course.key.direction)]
    assert ds.apc_coverage <= set(ds.courses)


def test_boardings_sum_equals_accepted_validations(small_synth):
    _, result, ds = small_synth
    total = sum(s.boardings_afc for c in ds.courses.values() for s in c.stops)
    assert total == len(ds.validations) == len(result.afc)


def test_missing_column(tmp_path):
    stations = pd.DataFrame({"station_id": ["A"], "name": ["a"], "lon": [5.0]})
    with pytest.raises(SchemaError):
        load_network(write_network(tmp_path, stations=stations))


def test_route_unknown_station(tmp_path):
    routes = pd.DataFrame([("L1", "outbound", 1, "A"), ("L1", "outbound", 2, "Q")],
                          columns=["line_id", "direction", "seq", "station_id"])
    with pytest.raises(ReferentialError):
        load_network(write_network(tmp_path, routes=routes))


def test_empty_dataset(tmp_path):
    courses = pd.DataFrame(columns=["course_id", "line_id", "direction", "service_date",
                                    "start_time"])
    with pytest.raises(EmptyDataset):
        load_network(write_network(tmp_path, courses=courses))


def test_coverage_summary(tmp_path):
    courses = pd.DataFrame([(f"c{i}", "L1", "outbound", "2024-03-04", 28800 + 600 * i)
                            for i in range(10)],
                           columns=["course_id", "line_id", "direction", "service_date",
                                    "start_time"])
    apc = apc_frame([(f"c{i}", s, "", "", o) for i in range(3) for s, o in ((1, 2), (2, 1), (3, 0))])
    ds = load_network(write_network(tmp_path, courses=courses, apc=apc))
    cov = coverage_summary(ds).set_index(["line_id", "direction"])
    assert cov.loc[("L1", "outbound"), "ratio"] == pytest.approx(0.3)
    inbound = cov.loc[("L1", "inbound")]
    assert inbound["ratio"] == 0.0 and bool(inbound["kriging_only"])


def test_fully_covered_ratio_one(tmp_path):
    generate(SynthScenario(n_lines=1, stops_per_line=5, courses_per_line_per_day=4, n_days=1,
                           coverage=1.0), tmp_path)
    cov = coverage_summary(load_network(tmp_path))
    assert (cov["ratio"] == 1.0).all()


def test_persisted_form_is_deterministic(small_synth, tmp_path):
    root, _, _ = small_synth
    a = save_dataset(load_network(root), tmp_path / "a")
    b = save_dataset(load_network(root), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert filecmp.cmp(pa, pb, shallow=False)


def test_config_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nwalk_radius_m = 500  # inline\nrates_by_direction=true\n"
                    "reject_log_path=\nunknown_key = 1\n")
    cfg = load_config(path, rng_seed=9)
    assert cfg.walk_radius_m == 500.0 and cfg.rates_by_direction
    assert cfg.reject_log_path is None and cfg.rng_seed == 9
    assert cfg.schedule_match_window_s == 300.0
    assert parse_key_values("a=1\na=2") == [("a", "1"), ("a", "2")]
    with pytest.raises(ValueError):
        parse_key_values("no equals sign")
