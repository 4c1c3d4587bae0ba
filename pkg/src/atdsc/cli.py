"""``atdsc`` command line: ingest, synth, train-anomaly, recommend, benchmark, report.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error (including missing input files).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import anomaly
from .benchmark import BenchmarkReport, benchmark_suite, month_failure_count
from .config import ConfigError, RunConfig, load_run_config
from .ingestion import (
    IngestionError,
    TimeBucket,
    build_area_stats,
    load_stats,
    load_zone_adjacency,
    parse_trip_records,
    read_prior_counts,
    save_stats,
    write_trip_records,
    write_zone_adjacency,
)
from .learner import run_atdsc, write_run_log
from .mdp import CityModel
from .synthetic import SynthConfig, generate_synthetic_corpus

ADJACENCY_FILE = "adjacency.txt"
REPORT_FILE = "report.csv"
LONG_FILE = "report_long.csv"
FC_FILE = "failure_counts.csv"
ONE_STEP_MAX_BUDGET = 30.0  # minutes; at or below this only the next move is advised


class UsageError(Exception):
    """Bad input from the user; maps to exit status 2."""


def _need_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _open_text(path: Path):
    return open(path, encoding="utf-8", newline="")


def _load_city(cfg: RunConfig, stats_dir: str) -> CityModel:
    d = Path(stats_dir)
    if not d.is_dir():
        raise UsageError(f"stats directory not found: {d}")
    adjacency = _need_file(d / ADJACENCY_FILE, "adjacency file")
    with _open_text(adjacency) as fh:
        graph = load_zone_adjacency(fh)
    stats = load_stats(d)
    return CityModel(stats, graph, cfg.mdp, seed=cfg.seed, cruise_mean=cfg.travel.cruise_mean,
                     cruise_std=cfg.travel.cruise_std)


def _gate_model(args) -> anomaly.MlpModel | None:
    if args.rule_only or not args.model:
        return None
    return anomaly.load_model(_need_file(args.model, "anomaly model"))


def _prior_vectors(city: CityModel) -> np.ndarray:
    """Mean monthly prior-year pickups per zone."""
    zones = city.graph.zones
    months = city.months
    rows = [[city.stats.month_counts(m, prior=True).get(z, 0) for z in zones] for m in months]
    return np.mean(np.array(rows, dtype=float), axis=0)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_synthetic_corpus(SynthConfig(
        n_zones=args.zones,
        months=tuple(args.months),
        year=args.year,
        trips_per_zone_hour=args.trips_per_zone_hour,
        pandemic_months=tuple(args.pandemic_months),
        pandemic_factor=args.pandemic_factor,
        pandemic_zones=tuple(args.pandemic_zones) if args.pandemic_zones else None,
        islands=args.islands,
        seed=cfg.seed,
    ))
    with open(out / "trips.csv", "w", encoding="utf-8", newline="") as fh:
        write_trip_records(corpus.records, fh)
    with open(out / "prior_trips.csv", "w", encoding="utf-8", newline="") as fh:
        write_trip_records(corpus.prior_records, fh)
    with open(out / ADJACENCY_FILE, "w", encoding="utf-8") as fh:
        write_zone_adjacency(corpus.graph, fh)
    print(f"wrote {len(corpus.records)} trips, {len(corpus.prior_records)} prior trips, "
          f"{len(corpus.graph.zones)} zones to {out}")
    return 0


def _read_prior(path: Path, graph):
    with _open_text(path) as fh:
        first = fh.readline()
    with _open_text(path) as fh:
        if first.startswith("zone_id"):
            return read_prior_counts(fh), None
        return parse_trip_records(fh, graph)


def cmd_ingest(args, cfg: RunConfig) -> int:
    trips = _need_file(args.trips, "trip file")
    adjacency = _need_file(args.adjacency, "adjacency file")
    prior_path = _need_file(args.prior, "prior-year file") if args.prior else None
    with _open_text(adjacency) as fh:
        graph = load_zone_adjacency(fh)
    with _open_text(trips) as fh:
        records, report = parse_trip_records(fh, graph)
    prior = None
    if prior_path is not None:
        prior, prior_report = _read_prior(prior_path, graph)
        if prior_report is not None and prior_report.total:
            print(f"prior file: rejected {prior_report.total} rows")
    if not records:
        raise UsageError(f"{trips}: no usable trip records")
    stats = build_area_stats(records, graph, cfg.buckets, prior)
    out = Path(args.out)
    save_stats(stats, out)
    with open(out / ADJACENCY_FILE, "w", encoding="utf-8") as fh:
        write_zone_adjacency(graph, fh)
    print(f"accepted {len(records)} records; rejected {report.total} "
          f"(malformed {report.malformed}, unknown zone {report.unknown_zone}, "
          f"non-positive duration {report.nonpositive_duration})")
    print(f"snapshot written to {out}")
    return 0


def cmd_train_anomaly(args, cfg: RunConfig) -> int:
    city = _load_city(cfg, args.stats)
    if not city.stats.prior_counts:
        raise UsageError("the stats snapshot has no prior-year counts")
    a = cfg.anomaly
    x, y, _, _ = anomaly.make_anomaly_dataset(_prior_vectors(city), a.samples, seed=cfg.seed,
                                              threshold=cfg.mdp.abnormal_threshold)
    model, rep = anomaly.mlp_train(x, y, hidden=a.hidden, lr=a.lr, epochs=a.epochs,
                                   batch_size=a.batch_size, seed=cfg.seed)
    anomaly.save_model(model, args.out)
    print(f"train accuracy {rep.train_accuracy:.4f}; validation accuracy {rep.val_accuracy:.4f}")
    print(f"model written to {args.out}")
    return 0


def cmd_recommend(args, cfg: RunConfig) -> int:
    city = _load_city(cfg, args.stats)
    if args.start not in city.graph.zones:
        raise UsageError(f"start zone {args.start} is not in the zone graph")
    month = args.month if args.month is not None else city.months[0]
    if month not in city.months:
        raise UsageError(f"month {month} is not in the data (have {city.months})")
    kinds = city.stats.bucket_config.kinds
    kind = args.day_kind or kinds[0]
    if kind not in kinds:
        raise UsageError(f"day kind {kind!r} not one of {', '.join(kinds)}")
    if not 0 <= args.hour < 24:
        raise UsageError("hour must lie in 0..23")
    if not args.budget > 0:
        raise UsageError("time budget must be positive")
    model = city.bucket_model(TimeBucket(month, kind, args.hour))
    bcfg = cfg.benchmark_config(metric=args.metric, fixed_fc=args.fixed_fc or None)
    fc, i_o = month_failure_count(city, month, bcfg, _gate_model(args))
    learner = dataclasses.replace(cfg.learner, budget=args.budget, seed=cfg.seed, metric=bcfg.metric)
    result = run_atdsc(model, model.index(args.start), learner, fc)
    route = result.route
    ids = route.zone_ids(model)
    one_step = args.budget <= ONE_STEP_MAX_BUDGET or len(route.legs) <= 1
    mode = "one-step" if one_step else "route"
    print(f"bucket {model.bucket.key}  budget {args.budget:g} min  I_o {i_o}  F_c {fc}  restarts {result.restarts}")
    print(f"mode: {mode}")
    if one_step and len(ids) > 1:
        print(f"next zone: {ids[1]}")
    print("route: " + " -> ".join(str(z) for z in ids))
    print("leg,zone,p_gr,delivery_min,cruise_min,expected_usd")
    for n, leg in enumerate(route.legs, 1):
        print(f"{n},{model.zones[leg.zone]},{leg.gate:.4f},{leg.delivery:.2f},{leg.cruise:.2f},{leg.earning:.4f}")
    print(f"total expected profit: {route.profit:.4f} USD over {route.elapsed:.2f} min"
          f" (last-leg overshoot {route.overshoot:.2f} min)")
    print(f"occupancy rate: {route.occupancy:.4f}")
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="") as fh:
            write_run_log(result.log, fh)
    return 0


def cmd_benchmark(args, cfg: RunConfig) -> int:
    city = _load_city(cfg, args.stats)
    bcfg = cfg.benchmark_config(metric=args.metric, fixed_fc=args.fixed_fc or None, jobs=args.jobs)
    if args.runs:
        bcfg = dataclasses.replace(bcfg, runs=args.runs)
    gate = _gate_model(args)
    report = benchmark_suite(city, bcfg, gate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / REPORT_FILE, "w", encoding="utf-8", newline="") as fh:
        report.write(fh)
    with open(out / LONG_FILE, "w", encoding="utf-8", newline="") as fh:
        report.write_long(fh)
    with open(out / FC_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "I_o", "N_normal", "F_c"])
        for month in sorted(report.failure_counts):
            fc, i_o = month_failure_count(city, month, bcfg, gate)
            w.writerow([month, i_o, city.anomaly(month)[1], fc])
    _print_summary(report.rows)
    print(f"report written to {out / REPORT_FILE}")
    return 0


def _print_summary(rows) -> None:
    weekly = [r for r in rows if r[3] == "weekly_income"]
    for method, month, _, _, value, se in weekly:
        print(f"{method:6s} month {month:2d}  weekly {value:10.2f} USD  (se {se:.2f})")
    for method, month, _, metric, value, _ in rows:
        if metric.startswith("log_improvement_vs_"):
            print(f"{method} vs {metric.rsplit('_', 1)[1]} month {month}: ln improvement {value:.4f}")


def cmd_report(args, cfg: RunConfig) -> int:
    path = _need_file(args.report, "report file")
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:6] != ["method", "month", "day_kind", "metric", "value", "stderr"]:
            raise UsageError(f"{path}: not a benchmark report")
        rows = [(r[0], int(r[1]), r[2], r[3], float(r[4]), float(r[5]) if r[5] else None) for r in reader]
    wanted = ("weekly_income", "hourly_income", "occupancy")
    out_rows = [r for r in rows if r[3] in wanted or r[3].startswith("log_improvement_vs_")]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            BenchmarkReport(None, [], {}, out_rows).write(fh)
    _print_summary(rows)
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="configuration override; may repeat")
    gate = argparse.ArgumentParser(add_help=False)
    gate.add_argument("--model", help="trained anomaly model file")
    gate.add_argument("--rule-only", action="store_true", help="use the labelling rule instead of the network")
    gate.add_argument("--metric", choices=("income", "occupancy"), help="learner reward and scoring metric")
    gate.add_argument("--fixed-fc", action="store_true", help="always use the base failure count")

    p = argparse.ArgumentParser(prog="atdsc", description="Taxi route recommendation by TD learning with self-check.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--zones", type=int, default=10)
    s.add_argument("--months", type=_int_list, default=[1])
    s.add_argument("--year", type=int, default=2020)
    s.add_argument("--trips-per-zone-hour", type=float, default=3.0)
    s.add_argument("--pandemic-months", type=_int_list, default=[])
    s.add_argument("--pandemic-factor", type=float, default=0.1)
    s.add_argument("--pandemic-zones", type=_int_list, default=None)
    s.add_argument("--islands", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="aggregate trip records into a stats snapshot")
    s.add_argument("--trips", required=True)
    s.add_argument("--adjacency", required=True)
    s.add_argument("--prior", help="prior-year trips or zone_id,bucket_key,pickup_count file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train-anomaly", parents=[common], help="train the anomaly network")
    s.add_argument("--stats", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_anomaly)

    s = sub.add_parser("recommend", parents=[common, gate], help="recommend a route")
    s.add_argument("--stats", required=True)
    s.add_argument("--start", type=int, required=True, help="start zone id")
    s.add_argument("--budget", type=float, default=60.0, help="time budget in minutes")
    s.add_argument("--month", type=int)
    s.add_argument("--day-kind")
    s.add_argument("--hour", type=int, default=9)
    s.add_argument("--log", help="write the self-check log CSV here")
    s.set_defaults(func=cmd_recommend)

    s = sub.add_parser("benchmark", parents=[common, gate], help="run every method and write the report")
    s.add_argument("--stats", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, help="parallel worker processes")
    s.add_argument("--runs", type=int, help="runs per method (default from config)")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("report", parents=[common], help="summarise a benchmark report")
    s.add_argument("--report", required=True)
    s.add_argument("--out", help="write the summary rows as CSV")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_run_config(args.config, overrides)
        return args.func(args, cfg)
    except (UsageError, ConfigError, FileNotFoundError, IngestionError) as exc:
        print(f"atdsc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"atdsc: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
