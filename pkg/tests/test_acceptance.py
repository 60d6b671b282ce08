"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

from unified_occupancy.config import Config
from unified_occupancy.core import ProfileSource, occupancy_from_flows
from unified_occupancy.evaluation import (CONTEXTUAL, KRIGED, MEAN_RATE, coverage_sweep,
                                          holdout_30, leave_line_out, wmape)
from unified_occupancy.fraud_rates import estimate_rate_table
from unified_occupancy.geostat import KrigingModel, VariogramBin, VariogramModel, fit_exponential
from unified_occupancy.ingest import load_network
from unified_occupancy.od import reconstruct, ticketing_profiles
from unified_occupancy.synth import SynthScenario, generate, oracle_rates, read_scenario
from unified_occupancy.unify import run_pipeline, write_outputs

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "radial6.cfg"


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def radial(tmp_path_factory):
    """The six-line scenario, generated and estimated once; timings kept for criterion 4."""
    root = tmp_path_factory.mktemp("radial6")
    t0 = time.perf_counter()
    result = generate(read_scenario(SCENARIO), root)
    ds = load_network(root)
    trips = reconstruct(ds)
    table = estimate_rate_table(ds, ticketing_profiles(ds, trips))
    elapsed = time.perf_counter() - t0
    return result, ds, trips, table, elapsed


def brute_occupancy(b, a):
    occ, load = [], 0
    for y, z in zip(b, a):
        load += int(y) - int(z)
        occ.append(load)
    return occ


def test_1_occupancy_arithmetic(verdict):
    rng = np.random.default_rng(1)
    flows = []
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        board = rng.integers(1, n, size=int(rng.integers(0, 200)))
        alight = np.array([rng.integers(b + 1, n + 1) for b in board], dtype=int)
        flows.append((np.bincount(board - 1, minlength=n), np.bincount(alight - 1, minlength=n)))
    t0 = time.perf_counter()
    bad = sum(occupancy_from_flows(b, a).tolist() != brute_occupancy(b, a) for b, a in flows)
    elapsed = time.perf_counter() - t0
    verdict(1, bad == 0 and elapsed < 1.0, f"mismatches={bad}/1000 runtime={elapsed:.3f}s (<1s)")


def dense_solve(xy, values, vm, q):
    n = len(values)
    gamma = lambda h: np.where(h == 0, 0.0, vm(h))  # noqa: E731
    a = np.ones((n + 1, n + 1))
    a[:n, :n] = gamma(cdist(xy, xy))
    a[n, n] = 0.0
    rhs = np.vstack([gamma(cdist(xy, q)), np.ones((1, len(q)))])
    sol = np.linalg.solve(a, rhs)
    return sol[:n].T @ values, sol[:n]


def test_2_kriging_solver(verdict):
    rng = np.random.default_rng(2)
    worst_pred = worst_sum = worst_exact = 0.0
    for k in range(50):
        n = int(rng.integers(3, 31))
        xy = rng.uniform(0, 10, (n, 2))
        values = rng.uniform(0, 1, n)
        nugget = 0.0 if k % 2 == 0 else float(rng.uniform(0, 0.02))
        vm = VariogramModel(nugget, float(rng.uniform(0.005, 0.1)), float(rng.uniform(0.5, 5)))
        model = KrigingModel(xy, values, vm)
        q = rng.uniform(-1, 11, (20, 2))
        expected, w_dense = dense_solve(xy, values, vm, q)
        w, _ = model.weights(q[:, 0], q[:, 1])
        pred, _ = model.predict(q[:, 0], q[:, 1])
        worst_pred = max(worst_pred, np.abs(pred - np.clip(expected, 0, 1)).max(),
                         np.abs(w - w_dense).max())
        worst_sum = max(worst_sum, np.abs(w.sum(axis=0) - 1).max())
        if nugget == 0.0:
            at, _ = model.predict(xy[:, 0], xy[:, 1])
            worst_exact = max(worst_exact, np.abs(at - values).max())
    ok = worst_pred <= 1e-8 and worst_sum <= 1e-10 and worst_exact <= 1e-8
    verdict(2, ok, f"max|krige-dense|={worst_pred:.2e} (<=1e-8) max|sum(w)-1|={worst_sum:.2e} "
                   f"(<=1e-10) max|exact interpolation error|={worst_exact:.2e}")


def test_3_variogram_fit(verdict):
    truth = VariogramModel(0.01, 0.04, 2.0)
    h = np.linspace(0.25, 7.75, 16)
    bins = [VariogramBin(float(x), float(truth(x)), 100) for x in h]
    fit = fit_exponential(bins)
    err = max(abs(fit.nugget - 0.01), abs(fit.sill - 0.04), abs(fit.range_km - 2.0))
    verdict(3, err <= 1e-3, f"nugget={fit.nugget:.6f} sill={fit.sill:.6f} "
                            f"range={fit.range_km:.6f} max error={err:.2e} (<=1e-3)")


def test_4_estimator_consistency(verdict, radial):
    result, _, _, table, elapsed = radial
    oracle = oracle_rates(result.truth_field).set_index("station_id")["oracle_rate"]
    frame = table.to_frame()
    frame = frame[frame["n_courses"] >= 30]
    err = (frame["rate"] - frame["station_id"].map(oracle)).abs()
    worst = err.max()
    ok = len(frame) > 0 and worst <= 0.05 and elapsed < 60
    verdict(4, ok, f"{len(frame)} (station, line) pairs with >=30 courses, "
                   f"max|rate-oracle|={worst:.4f} (<=0.05), "
                   f"{int((err > 0.05).sum())} outside, runtime={elapsed:.1f}s (<60s)")


def test_5_head_to_head(verdict, radial):
    _, ds, trips, _, _ = radial
    hold = holdout_30(ds, seed=42, trips=trips)
    llo = leave_line_out(ds, trips=trips, seed=42)
    h_mr, h_ca = hold.value(MEAN_RATE), hold.value(CONTEXTUAL)
    l_kr, l_ca = llo.value(KRIGED), llo.value(CONTEXTUAL)
    ok = h_mr < h_ca and l_kr < l_ca
    verdict(5, ok, f"holdout30 mean_rate={h_mr:.4f} < contextual={h_ca:.4f}; "
                   f"leave-line-out kriged={l_kr:.4f} < contextual={l_ca:.4f}")


def test_6_dominance(verdict, radial):
    _, ds, trips, _, _ = radial
    result = run_pipeline(ds, trips=trips)
    unified = [p for p in result.profiles.values() if p.source is not ProfileSource.APC_MEASURED]
    violations = sum(int((p.total < p.ticketing).sum()) for p in unified)
    verdict(6, violations == 0 and len(unified) > 0,
            f"{violations} violations over {len(unified)} unified courses")


def test_7_coverage_sweep(verdict, tmp_path):
    t0 = time.perf_counter()
    generate(SynthScenario(n_lines=1, courses_per_line_per_day=10, n_days=10, coverage=1.0,
                           rng_seed=42), tmp_path)
    ds = load_network(tmp_path)
    assert len(ds.apc_coverage) == 100
    sweep = coverage_sweep(ds, "L1")
    elapsed = time.perf_counter() - t0
    rho = spearmanr(sweep["coverage"], sweep["wmape"]).statistic
    at10 = sweep.loc[(sweep["coverage"] - 0.10).abs().idxmin()]
    full = sweep.loc[sweep["coverage"].idxmax()]
    ok = rho < -0.8 and at10["wmape"] <= 2 * full["wmape"] and elapsed < 120
    verdict(7, ok, f"spearman rho={rho:.3f} (<-0.8); wMAPE at {at10['coverage']:.2f} coverage="
                   f"{at10['wmape']:.4f} vs {full['coverage']:.2f} coverage={full['wmape']:.4f} "
                   f"(ratio {at10['wmape'] / full['wmape']:.2f} <= 2); runtime={elapsed:.1f}s")


def test_8_totality_and_determinism(verdict, tmp_path):
    generate(SynthScenario(n_lines=3, stops_per_line=9, courses_per_line_per_day=12, n_days=5,
                           boarding_rate=6.0, coverage=0.4, rng_seed=7), tmp_path / "data")
    ds = load_network(tmp_path / "data")
    a = run_pipeline(ds, Config(rng_seed=42))
    b = run_pipeline(load_network(tmp_path / "data"), Config(rng_seed=42))
    total = set(a.profiles) == set(ds.courses) and all(
        p.course_id == cid for cid, p in a.profiles.items())
    pa = write_outputs(a, tmp_path / "a")
    pb = write_outputs(b, tmp_path / "b")
    same = [x.name for x, y in zip(pa, pb) if filecmp.cmp(x, y, shallow=False)]
    ok = total and len(same) == len(pa) == len(pb)
    verdict(8, ok, f"{len(a.profiles)} profiles for {len(ds.courses)} courses; "
                   f"{len(same)}/{len(pa)} output files byte-identical")


def test_9_wmape_contract(verdict):
    unit = wmape([4, 6], [5, 6])
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        ref, est = rng.uniform(0, 100, 20), rng.uniform(0, 100, 20)
        k = float(rng.uniform(1e-3, 1e3))
        worst = max(worst, abs(wmape(k * ref, k * est) - wmape(ref, est)))
    verdict(9, unit == 0.1 and worst <= 1e-12,
            f"wmape([4,6],[5,6])={unit!r} (==0.1); max scale drift={worst:.1e} (<=1e-12)")
