"""Command-line entry point: ``unified-occupancy <command> [options]``.

Exit status is 0 on success, 1 when the data cannot be processed and 2 on
usage errors (which also print the input file schemas).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Config, load_config
from .errors import NoCoveredCourses, OccupancyError, SchemaError
from .ingest import load_network, save_dataset, schema_help, write_csv, write_rejects

logger = logging.getLogger("unified_occupancy")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{schema_help()}\n")
        sys.exit(2)


def _common(p: argparse.ArgumentParser, data: bool = True):
    p.add_argument("--config", type=Path, help="key=value configuration file")
    p.add_argument("--seed", type=int, help="seed for every random draw (overrides rng_seed)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    if data:
        p.add_argument("--data", type=Path, default=Path("."),
                       help="directory holding the input CSV files (default: .)")
        p.add_argument("--trips", type=Path,
                       help="reuse this trips.csv instead of reconstructing "
                            "(default: OUT/trips.csv when present)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unified-occupancy",
                     description="Unified (ticketed plus fare-evading) occupancy of public "
                                 "transport courses from fare validations and partial "
                                 "passenger counts.",
                     epilog=schema_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _common(sub.add_parser("ingest", help="validate inputs and write the cross-referenced dataset"))
    _common(sub.add_parser("reconstruct", help="infer alighting stops (trips.csv)"))
    _common(sub.add_parser("rates", help="mean fraud rate per (station, line) (fraud_rates.csv)"))
    _common(sub.add_parser("krige", help="fit the variogram and kriging model"))
    _common(sub.add_parser("unify", help="full pipeline (occupancies.csv and model files)"))

    p = sub.add_parser("evaluate", help="run an evaluation protocol (eval_report.csv)")
    _common(p)
    p.add_argument("--protocol", choices=["holdout30", "leavelineout"], required=True)

    p = sub.add_parser("sweep", help="coverage sweep on one line (sweep.csv)")
    _common(p)
    p.add_argument("--line", required=True, help="line_id to sweep")
    p.add_argument("--step", type=int, default=1, help="courses removed per iteration")

    p = sub.add_parser("fraudmap", help="raster of kriged rates and station GeoJSON")
    _common(p)
    p.add_argument("--resolution", type=int, help="cells per side (default from config: 200)")

    p = sub.add_parser("synth", help="generate a synthetic network with ground truth")
    _common(p, data=False)
    p.add_argument("--scenario", type=Path, help="key=value scenario file (defaults otherwise)")
    return parser


def _config(args) -> Config:
    return load_config(args.config, rng_seed=args.seed)


def _dataset(args, config: Config):
    ds = load_network(args.data, config)
    if ds.rejects:
        write_rejects(ds.rejects, args.out / "rejects.csv")
        logger.warning("%d input rows rejected (see %s)", len(ds.rejects), args.out / "rejects.csv")
    return ds


def _trips(args, ds, config):
    from .od import read_trips, reconstruct, write_trips

    path = args.trips or (args.out / "trips.csv")
    if path.exists():
        logger.info("reusing %s", path)
        return read_trips(ds, path)
    if args.trips:
        raise FileNotFoundError(path)
    trips = reconstruct(ds, config)
    write_trips(trips, args.out / "trips.csv")
    return trips


def _fit(args, ds, config):
    from .fraud_rates import measured_occupancies
    from .od import ticketing_profiles
    from .unify import fit_models

    trips = _trips(args, ds, config)
    if not ds.apc_coverage:
        raise NoCoveredCourses("no course carries APC measures on every stop; nothing to learn from")
    return fit_models(ds, ticketing_profiles(ds, trips), config, measured=measured_occupancies(ds))


def cmd_ingest(args, config):
    from .ingest import coverage_summary

    ds = _dataset(args, config)
    paths = save_dataset(ds, args.out)
    cov = coverage_summary(ds)
    print(f"{len(ds.courses)} courses, {len(ds.apc_coverage)} with full APC, "
          f"{len(ds.validations)} validations, {len(ds.rejects)} rejected rows")
    for row in cov.itertuples(index=False):
        flag = "  (kriging-only)" if row.kriging_only else ""
        print(f"  {row.line_id} {row.direction}: {row.n_covered}/{row.n_courses}{flag}")
    return paths


def cmd_reconstruct(args, config):
    from .od import reconstruct, write_trips

    ds = _dataset(args, config)
    trips = reconstruct(ds, config)
    counts = trips["method"].value_counts().sort_index()
    print(", ".join(f"{k}: {v}" for k, v in counts.items()))
    return [write_trips(trips, args.out / "trips.csv")]


def cmd_rates(args, config):
    from .fraud_rates import estimate_rate_table, write_rate_table
    from .od import ticketing_profiles

    ds = _dataset(args, config)
    trips = _trips(args, ds, config)
    table = estimate_rate_table(ds, ticketing_profiles(ds, trips), config)
    print(f"{len(table)} rate entries; diagnostics {dict(sorted(table.diagnostics.items()))}")
    return [write_rate_table(table, args.out / "fraud_rates.csv")]


def cmd_krige(args, config):
    import pandas as pd

    from .fraud_rates import write_rate_table
    from .geostat import rates_for_uncovered_stations, write_model

    ds = _dataset(args, config)
    table, model = _fit(args, ds, config)
    v = model.variogram
    print(f"variogram nugget={v.nugget:.6g} sill={v.sill:.6g} range_km={v.range_km:.6g}"
          + (" (degenerate)" if v.degenerate else ""))
    rates = rates_for_uncovered_stations(model, [ds.stations[s] for s in sorted(ds.stations)])
    kriged = pd.DataFrame(sorted(rates.items()), columns=["station_id", "kriged_rate"])
    return (write_model(model, args.out) + [write_rate_table(table, args.out / "fraud_rates.csv"),
                                            write_csv(kriged, args.out / "kriged_rates.csv")])


def cmd_unify(args, config):
    from .unify import run_pipeline, write_outputs

    ds = _dataset(args, config)
    trips = _trips(args, ds, config)
    result = run_pipeline(ds, config, trips)
    counts = {}
    for p in result.profiles.values():
        counts[p.source.value] = counts.get(p.source.value, 0) + 1
    print(f"{len(result.profiles)} courses unified: "
          + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    paths = write_outputs(result, args.out)
    if not args.no_figures:
        from .plotting import plot_profile
        # the busiest course is the most legible example of the unification
        busiest = max(result.profiles.values(), key=lambda p: (float(p.total.max()), p.course_id))
        paths.append(plot_profile(busiest, args.out / "profile.png"))
    return paths


def cmd_evaluate(args, config):
    from .evaluation import holdout_30, leave_line_out, write_report

    ds = _dataset(args, config)
    trips = _trips(args, ds, config)
    if args.protocol == "holdout30":
        report = holdout_30(ds, config.rng_seed, config, trips)
    else:
        report = leave_line_out(ds, config, trips)
    frame = report.to_frame()
    print(frame.to_string(index=False))
    paths = [write_report(report, args.out / "eval_report.csv")]
    if not args.no_figures:
        from .plotting import plot_eval_report
        paths.append(plot_eval_report(frame, args.out / "eval_report.png", args.protocol))
    return paths


def cmd_sweep(args, config):
    from .evaluation import coverage_sweep, write_sweep

    ds = _dataset(args, config)
    trips = _trips(args, ds, config)
    sweep = coverage_sweep(ds, args.line, args.step, config.rng_seed, config, trips)
    print(sweep.to_string(index=False, max_rows=20))
    paths = [write_sweep(sweep, args.out / "sweep.csv")]
    if not args.no_figures:
        from .plotting import plot_sweep
        paths.append(plot_sweep(sweep, args.out / "sweep.png", f"line {args.line}"))
    return paths


def cmd_fraudmap(args, config):
    from .fraudmap import write_fraud_map
    from .geostat import read_model

    ds = load_network(args.data, config)
    if (args.out / "variogram.csv").exists() and (args.out / "training_points.csv").exists():
        model = read_model(args.out)
    else:
        _, model = _fit(args, ds, config)
    resolution = args.resolution or config.grid_resolution
    paths, grid = write_fraud_map(model, ds.stations, args.out, resolution, config.grid_margin)
    print(f"{resolution}x{resolution} grid, rate range "
          f"[{grid['rate'].min():.4f}, {grid['rate'].max():.4f}]")
    if not args.no_figures:
        from .plotting import plot_fraud_map
        paths.append(plot_fraud_map(grid, ds.stations, model.station_ids,
                                    args.out / "fraudmap.png", model.centroid))
    return paths


def cmd_synth(args, config):
    import dataclasses

    from .synth import SynthScenario, generate, read_scenario

    scenario = read_scenario(args.scenario) if args.scenario else SynthScenario()
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, rng_seed=args.seed)
    result = generate(scenario, args.out)
    print(f"{len(result.courses)} courses, {len(result.afc)} validations, "
          f"{result.apc['course_id'].nunique() if len(result.apc) else 0} covered courses")
    return [args.out / f for f in ("stations.csv", "routes.csv", "courses.csv", "afc.csv",
                                   "apc.csv", "truth_occupancy.csv", "truth_field.csv",
                                   "truth_trips.csv")]


COMMANDS = {
    "ingest": cmd_ingest, "reconstruct": cmd_reconstruct, "rates": cmd_rates,
    "krige": cmd_krige, "unify": cmd_unify, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
    "fraudmap": cmd_fraudmap, "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
    except (OSError, ValueError, TypeError) as exc:
        parser.error(f"bad configuration: {exc}")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](args, config)
    except SchemaError as exc:
        print(f"error: {type(exc).__name__}: {exc}\n\n{schema_help()}", file=sys.stderr)
        return 1
    except (OccupancyError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths or ():
        logger.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
