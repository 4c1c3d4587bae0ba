"""Repeated day simulations of every method and the aggregated report.

A simulated day walks through the configured hours. Each hour uses its own
bucket model; the method plans a route for whatever is left of the hour,
the overshoot of the last leg is carried into the next hour, and the next
plan starts where the previous route ended.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .anomaly import MlpModel, anomaly_gate, failure_count
from .baselines import GreedyKind, run_greedy
from .evaluation import Route, hourly_income, log_improvement, mean_se, occupancy_rate
from .ingestion import TimeBucket
from .learner import LearnerConfig, run_atdsc, run_td_plain
from .mdp import CityModel

METHODS = ("ATDSC", "REI", "MPP", "MNP", "PCD")
BASELINES = ("REI", "MPP", "MNP", "PCD")
REPORT_HEADER = ["method", "month", "day_kind", "metric", "value", "stderr"]
LONG_HEADER = ["method", "month", "day_kind", "run", "start_zone", "daily_income", "hourly_income",
               "occupancy", "overshoot"]
HOUR = 60.0


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[str, ...] = METHODS
    months: tuple[int, ...] | None = None  # None: every month in the data
    runs: int = 30
    seed: int = 0
    hours: tuple[int, ...] = tuple(range(24))
    learner: LearnerConfig = LearnerConfig()
    metric: str = "income"
    fixed_fc: bool = False
    c: int = 8
    jobs: int = 1
    chain_hours: bool = False  # True: each hour continues where the previous route ended

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not self.hours or any(not 0 <= h < 24 for h in self.hours):
            raise ValueError("hours must be a non-empty subset of 0..23")
        if self.metric not in ("income", "occupancy"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass
class DayResult:
    method: str
    month: int
    day_kind: str
    run: int
    start_zone: int
    daily: float
    hours: int
    delivery: float
    cruising: float
    overshoot: float
    routes: list[Route] = field(default_factory=list, repr=False)

    @property
    def hourly(self) -> float:
        return self.daily / self.hours

    @property
    def occupancy(self) -> float:
        return occupancy_rate([self.delivery], [self.cruising])


def run_seed(seed: int, run: int, month: int, kind_code: int, hour: int) -> int:
    """Seed of one learner call; shared by the learners so they are paired."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(run, month, kind_code, hour))
    return int(seq.generate_state(1)[0])


def start_zones(seed: int, runs: int, m: int) -> list[int]:
    """Uniform random start indices from a dedicated stream."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xC0FFEE,)))
    return [int(z) for z in rng.integers(0, m, size=runs)]


def month_failure_count(city: CityModel, month: int, cfg: BenchmarkConfig,
                        gate_model: MlpModel | None = None) -> tuple[int, int]:
    """``(F_c, I_o)`` of a month."""
    if cfg.fixed_fc:
        return cfg.c, 0
    _, n_normal = city.anomaly(month)
    zones = city.graph.zones
    cur = [city.stats.month_counts(month).get(z, 0) for z in zones]
    pri = [city.stats.month_counts(month, prior=True).get(z, 0) for z in zones]
    if not any(pri):
        return cfg.c, 0
    i_o = anomaly_gate(cur, pri, gate_model, city.config.abnormal_threshold)
    return failure_count(i_o, n_normal, len(zones), cfg.c), i_o


def plan(method: str, model, start: int, budget: float, prev: int | None, learner: LearnerConfig,
         fc: int) -> Route:
    if method == "ATDSC":
        return run_atdsc(model, start, replace(learner, budget=budget), fc, prev).route
    if method == "REI":
        return run_td_plain(model, start, replace(learner, budget=budget), prev).route
    return run_greedy(GreedyKind(method), start, budget, model, prev)


def simulate_day(city: CityModel, method: str, month: int, day_kind: str, start: int,
                 cfg: BenchmarkConfig, run: int = 0, fc: int = 8, keep_routes: bool = False) -> DayResult:
    kind_code = city.stats.bucket_config.kinds.index(day_kind)
    cur, prev, carry = start, None, 0.0
    daily = delivery = cruising = overshoot = 0.0
    routes = []
    for hour in cfg.hours:
        if carry >= HOUR:
            carry -= HOUR
            continue
        model = city.bucket_model(TimeBucket(month, day_kind, hour))
        learner = replace(cfg.learner, metric=cfg.metric, seed=run_seed(cfg.seed, run, month, kind_code, hour))
        route = plan(method, model, cur, HOUR - carry, prev, learner, fc)
        daily += route.profit
        for leg in route.legs:
            delivery += leg.occupied
            cruising += leg.minutes - leg.occupied
        carry = route.overshoot
        overshoot = route.overshoot
        if keep_routes:
            routes.append(route)
        if not cfg.chain_hours:
            carry = 0.0
        elif len(route.zones) > 1:
            prev, cur = route.zones[-2], route.zones[-1]
    return DayResult(method, month, day_kind, run, city.graph.zones[start], daily, len(cfg.hours),
                     delivery, cruising, overshoot, routes)


_WORKER_CITY: CityModel | None = None


def _init_worker(city: CityModel) -> None:
    global _WORKER_CITY
    _WORKER_CITY = city


def _task(args) -> DayResult:
    method, month, kind, start, cfg, run, fc = args
    return simulate_day(_WORKER_CITY, method, month, kind, start, cfg, run, fc)


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    days: list[DayResult]
    failure_counts: dict[int, int]
    rows: list[tuple] = field(default_factory=list)

    def value(self, method: str, month: int, day_kind: str, metric: str) -> float:
        for r in self.rows:
            if r[:4] == (method, month, day_kind, metric):
                return r[4]
        raise KeyError((method, month, day_kind, metric))

    def write(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for method, month, kind, metric, value, se in self.rows:
            w.writerow([method, month, kind, metric, _fmt(value), "" if se is None else _fmt(se)])

    def write_long(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for d in self.days:
            w.writerow([d.method, d.month, d.day_kind, d.run, d.start_zone, _fmt(d.daily), _fmt(d.hourly),
                        _fmt(d.occupancy), _fmt(d.overshoot)])


def _fmt(x: float) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.10g}"


def _aggregate(cfg: BenchmarkConfig, days: list[DayResult], kinds: Sequence[str],
               days_per_week: dict[str, int]) -> list[tuple]:
    rows = []
    grouped: dict[tuple[str, int, str], list[DayResult]] = {}
    for d in days:
        grouped.setdefault((d.method, d.month, d.day_kind), []).append(d)
    months = sorted({d.month for d in days})
    weekly: dict[tuple[str, int], float] = {}
    for month in months:
        for method in cfg.methods:
            week, week_var = 0.0, 0.0
            for kind in kinds:
                ds = sorted(grouped[(method, month, kind)], key=lambda d: d.run)
                h, se = hourly_income([d.daily for d in ds], len(cfg.hours))
                occ, occ_se = mean_se([d.occupancy for d in ds])
                over, _ = mean_se([d.overshoot for d in ds])
                rows.append((method, month, kind, "hourly_income", h, se))
                rows.append((method, month, kind, "occupancy", occ, occ_se))
                rows.append((method, month, kind, "last_leg_overshoot", over, None))
                rows.append((method, month, kind, "runs", len(ds), None))
                n = days_per_week[kind]
                week += 10.0 * n * h
                week_var += (10.0 * n * se) ** 2
            weekly[(method, month)] = week
            rows.append((method, month, "week", "weekly_income", week, math.sqrt(week_var)))
        if "ATDSC" in cfg.methods:
            a = weekly[("ATDSC", month)]
            for base in BASELINES:
                if base in cfg.methods and weekly[(base, month)] > 0:
                    imp = log_improvement(a, weekly[(base, month)])
                    rows.append(("ATDSC", month, "week", f"log_improvement_vs_{base}", imp.value, None))
    return rows


def benchmark_suite(city: CityModel, cfg: BenchmarkConfig = BenchmarkConfig(),
                    gate_model: MlpModel | None = None) -> BenchmarkReport:
    """Simulate ``cfg.runs`` days per method, month and day kind."""
    months = tuple(cfg.months) if cfg.months is not None else tuple(city.months)
    missing = set(months) - set(city.months)
    if missing:
        raise ValueError(f"months {sorted(missing)} are not in the data")
    kinds = city.stats.bucket_config.kinds
    starts = start_zones(cfg.seed, cfg.runs, len(city.graph.zones))
    fcs = {m: month_failure_count(city, m, cfg, gate_model)[0] for m in months}
    tasks = [(method, month, kind, starts[run], cfg, run, fcs[month])
             for month in months for kind in kinds for method in cfg.methods for run in range(cfg.runs)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(city,)) as pool:
            days = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        days = [simulate_day(city, method, month, kind, start, cfg, run, fc)
                for method, month, kind, start, _, run, fc in tasks]
    dpw = {k: city.stats.bucket_config.days_per_week(k) for k in kinds}
    return BenchmarkReport(cfg, days, fcs, _aggregate(cfg, days, kinds, dpw))
