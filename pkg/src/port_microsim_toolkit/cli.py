"""Command line entry point: `port-microsim {run,replicate,compare,validate}`.

Exit codes are 0 on success, 2 for configuration or usage errors (bad
scenario, bad argument, unreadable or unwritable path) and 1 for any other
failure. Diagnostics go to stderr; stdout only carries the short summary
tables."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import pandas as pd
import yaml

from .metrics import policy_comparison, seed_spread
from .routing_policies import POLICY_NAMES
from .scenario import (ScenarioError, default_dover_scenario, default_validation_scenario,
        load_scenario_file, scenario_hash)
from .sim_engine.engine import run
from .sim_engine.replication import DEFAULT_SEEDS, replicate
from .sim_engine.results import write_csv, write_text
from .detector_validation.trip_sources import run_validation


LOG = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2



def _load(args, fallback):
    if args.scenario is None:
        return fallback()
    return load_scenario_file(args.scenario)


def _seeds(args) -> tuple:
    if args.seed_list:
        seeds = tuple(int(s) for s in args.seed_list.split(","))
    else:
        if args.seeds < 1:
            raise ValueError(f"--seeds must be >= 1, got {args.seeds}.")
        seeds = tuple(range(args.base_seed, args.base_seed + args.seeds))
    if any(seed < 0 for seed in seeds):
        raise ValueError("Seeds must be >= 0.")
    return seeds


def _names(text: str) -> tuple:
    return tuple(name.strip() for name in text.split(",") if name.strip())


def _rates(text: str) -> tuple:
    return tuple(float(rate) for rate in _names(text))


def _manifest(path, document: dict):
    write_text(yaml.safe_dump(document, sort_keys=True), path)


def _summary_endpoints(scenario):
    """Station and trip endpoints the replicate summary reports."""
    calibration = scenario.calibration
    if calibration is not None:
        return calibration.station, calibration.trip_from, calibration.trip_to
    topology = scenario.topology
    station = topology.routed_station or topology.station_ids[0]
    return station, "source", "sink"


def _echo(frame):
    sys.stdout.write(frame.to_string(index=False, float_format=lambda v: f"{v:.2f}") + "\n")



def cmd_run(args) -> int:
    scenario = _load(args, default_dover_scenario)
    if args.rate is not None:
        scenario = scenario.with_flow_rate(args.rate)
    result = run(scenario, args.policy, args.seed, record_events=args.events,
            drain=False if args.no_drain else None, warmup=args.warmup)
    result.check_conservation()
    os.makedirs(args.out, exist_ok=True)
    result.write_trips_csv(os.path.join(args.out, "trips.csv"))
    result.write_queue_csv(os.path.join(args.out, "queues.csv"))
    if args.events:
        write_csv(result.events_frame(), os.path.join(args.out, "events.csv"), result.header())
    result.write_manifest(os.path.join(args.out, "manifest.yaml"),
            {"rate_veh_h": args.rate})
    trips = result.trips_frame()["trip_s"].dropna()
    sys.stdout.write(f"{result.n_exited} of {result.n_scheduled} vehicles completed; "
            f"mean trip {trips.mean():.1f} s\n" if len(trips) else
            f"0 of {result.n_scheduled} vehicles completed\n")
    return EXIT_OK


def cmd_replicate(args) -> int:
    scenario = _load(args, default_dover_scenario)
    if args.rate is not None:
        scenario = scenario.with_flow_rate(args.rate)
    seeds = _seeds(args)
    reps = replicate(scenario, args.policy, seeds, jobs=args.jobs,
            drain=False if args.no_drain else None, warmup=args.warmup, progress=args.progress)
    os.makedirs(args.out, exist_ok=True)
    for result in reps:
        result.check_conservation()
        result.write_trips_csv(os.path.join(args.out, f"trips_seed{result.seed}.csv"))
    station, trip_from, trip_to = _summary_endpoints(scenario)
    document = {"scenario": scenario.name, "scenario_hash": scenario_hash(scenario),
            "policy": reps.policy, "seeds": list(seeds), "rate_veh_h": args.rate,
            "station": station, "trip_from": trip_from, "trip_to": trip_to}
    if len(reps) > 1:
        spread = seed_spread(reps, station, trip_from, trip_to)
        frame = pd.DataFrame({"seed": spread.seeds, "mean_trip_s": spread.mean_trip_times,
            "mean_queue_m": spread.mean_queues})
        header = f"# scenario_hash={scenario_hash(scenario)},policy={reps.policy}," \
                f"seed={seeds[0]}..{seeds[-1]}\n"
        write_csv(frame, os.path.join(args.out, "spread.csv"), header)
        document.update({"max_queue_difference_m": spread.max_queue_difference,
            "max_trip_ratio": spread.max_trip_ratio, "trip_cv": spread.trip_cv})
        _echo(frame)
    _manifest(os.path.join(args.out, "manifest.yaml"), document)
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load(args, default_dover_scenario)
    policies = _names(args.policies)
    unknown = [p for p in policies if p not in POLICY_NAMES]
    if unknown:
        raise ValueError(f"Unknown policies {unknown}; expected names from {POLICY_NAMES}.")
    rates = _rates(args.rates) if args.rates else None
    seeds = _seeds(args)
    report = policy_comparison(scenario, policies, rates, seeds, jobs=args.jobs,
            progress=args.progress, drain=False if args.no_drain else None, warmup=args.warmup)
    os.makedirs(args.out, exist_ok=True)
    header = f"# scenario_hash={scenario_hash(scenario)},policy={';'.join(policies)}," \
            f"seed={seeds[0]}..{seeds[-1]}\n"
    exports = {"comparison.csv": report.to_frame(),
            "occupancy_by_rate.csv": report.occupancy_by_rate_frame(),
            "occupancy_error.csv": report.occupancy_error_frame(),
            "trip_times.csv": report.trip_time_frame(),
            "scorecard.csv": report.scorecard_frame()}
    for name, frame in exports.items():
        write_csv(frame, os.path.join(args.out, name), header)
    worst = {metric: {"policy": entries[0].policy, "band": entries[0].band,
        "error": float(entries[0].error)} for metric, entries in report.scorecard.items()
        if entries}
    _manifest(os.path.join(args.out, "manifest.yaml"), {"scenario": scenario.name,
        "scenario_hash": scenario_hash(scenario), "policies": list(policies),
        "rates_veh_h": sorted({cell.rate for cell in report.cells}), "seeds": list(seeds),
        "warmup_s": scenario.warmup if args.warmup is None else args.warmup,
        "drained": scenario.drain and not args.no_drain, "worst": worst})
    _echo(report.to_frame())
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = _load(args, default_validation_scenario)
    report = run_validation(scenario, args.seed, args.policy, args.dedupe_window, args.warmup,
            drain=False if args.no_drain else None)
    result = report.result
    os.makedirs(args.out, exist_ok=True)
    header = result.header()
    write_csv(report.comparison.summary_frame(), os.path.join(args.out, "trip_summary.csv"),
            header)
    write_csv(report.comparison.tests_frame(), os.path.join(args.out, "ks_tests.csv"), header)
    write_csv(report.reference.summary_frame(),
            os.path.join(args.out, "reference_summary.csv"), header)
    write_csv(report.pdf_frame(), os.path.join(args.out, "trip_pdf.csv"), header)
    for log in report.logs:
        log.to_csv(os.path.join(args.out, f"detections_{log.site}.csv"), header)
    report.matches.to_csv(os.path.join(args.out, "matched_trips.csv"), header)
    report.camera.to_csv(os.path.join(args.out, "camera_trips.csv"), header)
    result.write_manifest(os.path.join(args.out, "manifest.yaml"),
            {"validation": report.detection_counts()})
    _echo(report.comparison.summary_frame())
    return EXIT_OK



def _common(parser, default_policy: str = "agent"):
    _scenario_options(parser)
    parser.add_argument("--policy", default=default_policy, choices=POLICY_NAMES)


def _scenario_options(parser):
    parser.add_argument("--scenario", default=None,
            help="Scenario file (YAML or JSON). Defaults to the bundled fixture.")
    parser.add_argument("--out", default=".", help="Output directory.")
    parser.add_argument("--warmup", type=float, default=None,
            help="Warm-up in seconds excluded from the metrics.")
    parser.add_argument("--no-drain", action="store_true",
            help="Stop at the horizon instead of draining the system.")


def _seed_options(parser):
    parser.add_argument("--seeds", type=int, default=len(DEFAULT_SEEDS),
            help="Number of seeds (default %(default)s).")
    parser.add_argument("--base-seed", type=int, default=DEFAULT_SEEDS[0])
    parser.add_argument("--seed-list", default=None, help="Comma separated seeds.")
    parser.add_argument("--jobs", type=int, default=1, help="Worker processes.")
    parser.add_argument("--progress", action="store_true", help="Show progress bars.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="port-microsim",
            description="Port-entry corridor microsimulation experiments.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run one replication.")
    _common(run_parser)
    run_parser.add_argument("--seed", type=int, default=0)
    run_parser.add_argument("--rate", type=float, default=None,
            help="Use the constant-rate flow profile at this rate (veh/h).")
    run_parser.add_argument("--events", action="store_true", help="Also write the event log.")
    run_parser.set_defaults(func=cmd_run)

    rep_parser = commands.add_parser("replicate", help="Run one policy over many seeds.")
    _common(rep_parser)
    _seed_options(rep_parser)
    rep_parser.add_argument("--rate", type=float, default=None)
    rep_parser.set_defaults(func=cmd_replicate)

    cmp_parser = commands.add_parser("compare", help="Policy x flow-rate comparison grid.")
    _scenario_options(cmp_parser)
    cmp_parser.add_argument("--policies", default=",".join(POLICY_NAMES))
    cmp_parser.add_argument("--rates", default=None,
            help="Comma separated flow rates; the scenario's flow profiles by default.")
    _seed_options(cmp_parser)
    cmp_parser.set_defaults(func=cmd_compare)

    val_parser = commands.add_parser("validate", help="Detector based trip-time validation.")
    _common(val_parser)
    val_parser.add_argument("--seed", type=int, default=0)
    val_parser.add_argument("--dedupe-window", type=float, default=None,
            help="Seconds; 0 disables deduplication.")
    val_parser.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError) as err:
        sys.stderr.write(f"port-microsim: error: {err}\n")
        return EXIT_CONFIG
    except Exception:
        LOG.exception("Internal failure")
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
