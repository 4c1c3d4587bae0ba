"""Desk-scale synthetic taxi corpora shaped like the NYC yellow-cab data.

Zones sit on a jittered grid with 4-neighbour adjacency. Pickups per
(zone, day, hour) are Poisson with a diurnal profile; drop-offs follow a
gravity model; durations grow with grid distance and rush-hour congestion.
"""
from __future__ import annotations

import calendar
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .ingestion import TripRecord, ZoneGraph

# relative pickup intensity by hour of day
_WEEKDAY_PROFILE = np.array([
    0.35, 0.25, 0.18, 0.15, 0.22, 0.45, 0.80, 1.25, 1.45, 1.20, 1.00, 1.00,
    1.05, 1.00, 1.00, 1.10, 1.30, 1.55, 1.60, 1.40, 1.15, 0.95, 0.75, 0.55,
])
_WEEKEND_PROFILE = np.array([
    0.70, 0.60, 0.45, 0.30, 0.22, 0.22, 0.30, 0.45, 0.65, 0.85, 1.00, 1.10,
    1.15, 1.15, 1.10, 1.10, 1.10, 1.15, 1.20, 1.20, 1.15, 1.05, 0.95, 0.85,
])


@dataclass(frozen=True)
class SynthConfig:
    n_zones: int = 10
    months: tuple[int, ...] = (1,)
    year: int = 2020
    trips_per_zone_hour: float = 3.0
    pandemic_months: tuple[int, ...] = ()
    pandemic_factor: float = 0.1
    pandemic_zones: tuple[int, ...] | None = None  # zone ids; None = every zone
    islands: int = 0  # extra zones forming a separate connected component
    outlier_rate: float = 0.002
    seed: int = 1
    zone_weights: tuple[float, ...] | None = field(default=None)


@dataclass
class SyntheticCorpus:
    records: list[TripRecord]
    graph: ZoneGraph
    prior_records: list[TripRecord]
    positions: dict[int, tuple[float, float]]


def _layout(n_zones: int, islands: int, rng) -> tuple[dict[int, tuple[float, float]], list[tuple[int, int]]]:
    main = n_zones - islands
    cols = max(1, math.ceil(math.sqrt(main)))
    pos, edges = {}, []
    for i in range(main):
        r, c = divmod(i, cols)
        pos[i + 1] = (c + rng.uniform(-0.2, 0.2), r + rng.uniform(-0.2, 0.2))
        if c > 0:
            edges.append((i, i + 1))
        if r > 0:
            edges.append((i + 1 - cols, i + 1))
    rows = math.ceil(main / cols)
    for j in range(islands):
        z = main + j + 1
        pos[z] = (cols + 2.0 + j, rows + 2.0)
        if j > 0:
            edges.append((z - 1, z))
    return pos, edges


def _month_trips(cfg: SynthConfig, year: int, month: int, factor_by_zone: np.ndarray,
                 zone_ids: list[int], dist: np.ndarray, weights: np.ndarray,
                 fare_mult: np.ndarray, attract: np.ndarray, rng) -> list[TripRecord]:
    records = []
    gravity = attract[None, :] / (1.0 + dist) ** 2
    gravity /= gravity.sum(axis=1, keepdims=True)
    ndays = calendar.monthrange(year, month)[1]
    for day in range(1, ndays + 1):
        weekend = datetime(year, month, day).weekday() >= 5
        profile = _WEEKEND_PROFILE if weekend else _WEEKDAY_PROFILE
        for hour in range(24):
            congestion = 1.0 + (0.35 if (not weekend and hour in (7, 8, 9, 16, 17, 18)) else 0.0)
            lam = cfg.trips_per_zone_hour * weights * profile[hour] * factor_by_zone
            counts = rng.poisson(lam)
            for zi in range(len(zone_ids)):
                n = int(counts[zi])
                if n == 0:
                    continue
                minutes = rng.integers(0, 60, size=n)
                dests = rng.choice(len(zone_ids), size=n, p=gravity[zi])
                noise = rng.normal(0.0, 1.0, size=n)
                pay_noise = rng.lognormal(0.0, 0.08, size=n)
                outlier = rng.random(n) < cfg.outlier_rate
                ptype = rng.choice([1, 1, 1, 2], size=n)
                pax = rng.integers(1, 5, size=n)
                for k in range(n):
                    di = int(dests[k])
                    base = (5.0 + 3.5 * dist[zi, di]) * congestion
                    dur = max(1, int(round(base * (1.0 + 0.15 * noise[k]))))
                    miles = 0.6 + 0.9 * dist[zi, di]
                    pay = (3.0 + 0.55 * dur * fare_mult[zi] + 0.3 * miles) * pay_noise[k]
                    if outlier[k]:
                        pay *= 8.0
                    start = datetime(year, month, day, hour, int(minutes[k]))
                    records.append(TripRecord(
                        pickup_time=start,
                        dropoff_time=start + timedelta(minutes=dur),
                        pickup_zone=zone_ids[zi],
                        dropoff_zone=zone_ids[di],
                        trip_distance=round(float(miles), 2),
                        total_payment=round(float(pay), 2),
                        payment_type=int(ptype[k]),
                        passenger_count=int(pax[k]),
                    ))
    records.sort(key=lambda r: (r.pickup_time, r.pickup_zone, r.dropoff_zone, r.dropoff_time))
    return records


def generate_synthetic_corpus(cfg: SynthConfig = SynthConfig()) -> SyntheticCorpus:
    """Generate current-year records, the adjacency graph and prior-year records.

    Deterministic in ``cfg``. Pandemic months scale the Poisson intensity of
    ``pandemic_zones`` (default all) by ``pandemic_factor``; the prior year is
    always generated at full demand.
    """
    if cfg.n_zones < 2:
        raise ValueError(f"a synthetic city needs at least 2 zones, got {cfg.n_zones}")
    if cfg.islands and cfg.n_zones - cfg.islands < 2:
        raise ValueError("islands leave fewer than 2 mainland zones")
    root = np.random.SeedSequence(cfg.seed)
    city_rng, cur_rng, prior_rng = (np.random.default_rng(s) for s in root.spawn(3))

    pos, edges = _layout(cfg.n_zones, cfg.islands, city_rng)
    graph = ZoneGraph.from_edges(edges, zones=pos)
    zone_ids = list(graph.zones)
    xy = np.array([pos[z] for z in zone_ids])
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    if cfg.zone_weights is not None:
        weights = np.asarray(cfg.zone_weights, dtype=float)
        if weights.shape != (cfg.n_zones,):
            raise ValueError("zone_weights must have one entry per zone")
    else:
        weights = np.clip(city_rng.lognormal(0.0, 0.45, size=cfg.n_zones), 0.4, 2.5)
    fare_mult = city_rng.uniform(0.8, 1.3, size=cfg.n_zones)
    attract = weights * city_rng.uniform(0.7, 1.3, size=cfg.n_zones)

    hit = np.ones(cfg.n_zones, dtype=bool)
    if cfg.pandemic_zones is not None:
        hit = np.array([z in set(cfg.pandemic_zones) for z in zone_ids])

    records, prior = [], []
    for month in sorted(cfg.months):
        factor = np.ones(cfg.n_zones)
        if month in cfg.pandemic_months:
            factor = np.where(hit, cfg.pandemic_factor, 1.0)
        records += _month_trips(cfg, cfg.year, month, factor, zone_ids, dist, weights, fare_mult, attract, cur_rng)
        prior += _month_trips(cfg, cfg.year - 1, month, np.ones(cfg.n_zones), zone_ids, dist, weights,
                              fare_mult, attract, prior_rng)
    return SyntheticCorpus(records=records, graph=graph, prior_records=prior,
                           positions={z: (float(x), float(y)) for z, (x, y) in zip(zone_ids, xy)})
