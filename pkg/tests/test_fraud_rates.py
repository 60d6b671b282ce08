from collections import Counter

import numpy as np
import pytest

from conftest import apc_frame, write_network
from unified_occupancy.config import Config
from unified_occupancy.errors import NoCoveredCourses
from unified_occupancy.fraud_rates import (course_fraud_ratios, estimate_rate_table,
                                           mean_fraud_rates, read_rate_table, write_rate_table)
from unified_occupancy.ingest import load_network
from unified_occupancy.od import reconstruct, ticketing_profiles
from unified_occupancy.synth import FraudField, SynthScenario, generate


def covered_network(tmp_path, n_courses=2):
    import pandas as pd
    courses = pd.DataFrame([(f"c{i}", "L1", "outbound", "2024-03-04", 28800 + 900 * i)
                            for i in range(1, n_courses + 1)],
                           columns=["course_id", "line_id", "direction", "service_date",
                                    "start_time"])
    apc = apc_frame([(f"c{i}", s, "", "", o) for i in range(1, n_courses + 1)
                     for s, o in ((1, 1), (2, 1), (3, 0))])
    return load_network(write_network(tmp_path, courses=courses, apc=apc))


class TestCourseRatios:
    def test_direct(self):
        r = course_fraud_ratios([12, 11, 0], [10, 10, 0])
        np.testing.assert_allclose(r[:2], [0.2, 0.1])
        assert np.isnan(r[2])

    def test_no_fraud(self):
        r = course_fraud_ratios([5, 3, 0], [5, 3, 0])
        np.testing.assert_array_equal(r[:2], 0.0)

    def test_zero_denominator(self):
        diag = Counter()
        r = course_fraud_ratios([2, 6, 0], [0, 5, 0], diag)
        assert np.isnan(r[0]) and r[1] == pytest.approx(0.2) and np.isnan(r[2])
        assert diag["skipped_zero_ticketing"] == 1


class TestMeanRates:
    def test_mean(self, tmp_path):
        ds = covered_network(tmp_path)
        table = mean_fraud_rates(ds, {"c1": np.array([0.2, 0.3, np.nan]),
                                      "c2": np.array([0.1, 0.3, np.nan])})
        entry = table.lookup("A", "L1")
        assert entry.rate == pytest.approx(0.15) and entry.n_courses == 2
        assert ("C", "L1") not in table

    def test_floor(self, tmp_path):
        ds = covered_network(tmp_path, 1)
        table = mean_fraud_rates(ds, {"c1": np.array([-0.05, 0.1, np.nan])})
        assert table.lookup("A", "L1").rate == 0.0
        assert table.diagnostics["floored_negative"] == 1

    def test_identical_ratios_exact(self, tmp_path):
        ds = covered_network(tmp_path, 7)
        r = 0.1 + 1e-17 * 3
        table = mean_fraud_rates(ds, {f"c{i}": np.array([r, 1 / 3, np.nan]) for i in range(1, 8)})
        assert table.lookup("A", "L1").rate == r
        assert table.lookup("B", "L1").rate == 1 / 3

    def test_min_courses(self, tmp_path):
        ds = covered_network(tmp_path)
        table = mean_fraud_rates(ds, {"c1": np.array([0.2, 0.3, np.nan]),
                                      "c2": np.array([np.nan, 0.3, np.nan])},
                                 Config(min_courses=2))
        assert ("A", "L1") not in table and ("B", "L1") in table

    def test_by_direction_keys(self, small_synth):
        _, _, ds = small_synth
        tick = ticketing_profiles(ds, reconstruct(ds))
        table = estimate_rate_table(ds, tick, Config(rates_by_direction=True))
        assert all(len(k) == 3 for k in table.entries)
        assert {k[2] for k in table.entries} == {"outbound", "inbound"}

    def test_no_coverage(self, tmp_path):
        ds = load_network(write_network(tmp_path))
        with pytest.raises(NoCoveredCourses):
            mean_fraud_rates(ds, {})

    def test_removing_course_touches_only_its_entries(self, small_synth):
        _, _, ds = small_synth
        tick = ticketing_profiles(ds, reconstruct(ds))
        covered = sorted(ds.apc_coverage)
        full = estimate_rate_table(ds, tick)
        dropped = covered[0]
        course = ds.courses[dropped]
        served = {(s, course.key.line_id) for s in course.station_ids}
        partial = estimate_rate_table(ds, tick, course_ids=covered[1:])
        for key, entry in full.entries.items():
            if key not in served:
                assert partial.entries[key] == entry

    def test_keys_are_served_pairs_with_ticketing(self, small_synth):
        _, _, ds = small_synth
        tick = ticketing_profiles(ds, reconstruct(ds))
        table = estimate_rate_table(ds, tick)
        expected = set()
        for cid in ds.apc_coverage:
            c = ds.courses[cid]
            for sid, ov in zip(c.station_ids[:-1], tick[cid].ticketing[:-1]):
                if ov > 0:
                    expected.add((sid, c.key.line_id))
        assert set(table.entries) == expected
        assert all(e.n_courses >= 1 and e.rate >= 0 for e in table.entries.values())

    def test_file_round_trip(self, small_synth, tmp_path):
        _, _, ds = small_synth
        table = estimate_rate_table(ds, ticketing_profiles(ds, reconstruct(ds)))
        again = read_rate_table(write_rate_table(table, tmp_path / "fraud_rates.csv"))
        assert set(again.entries) == set(table.entries)
        for k, e in table.entries.items():
            assert again.entries[k].rate == pytest.approx(e.rate, rel=1e-9)


@pytest.mark.slow
def test_uniform_fraud_converges_to_odds(tmp_path):
    # one line, every course counted: >= 560 courses per (station, line)
    scenario = SynthScenario(n_lines=1, stops_per_line=7, courses_per_line_per_day=40,
                             n_days=28, boarding_rate=20.0, coverage=1.0,
                             fraud_field=FraudField((), 0.1), rng_seed=1)
    generate(scenario, tmp_path)
    ds = load_network(tmp_path)
    table = estimate_rate_table(ds, ticketing_profiles(ds, reconstruct(ds)))
    frame = table.to_frame()
    frame = frame[frame["n_courses"] >= 50]
    assert len(frame) == scenario.stops_per_line
    np.testing.assert_allclose(frame["rate"], 0.1 / 0.9, atol=0.02)
