"""Delivery and cruising time estimation between zones.

Lookup order for a (from, to, bucket) query: observed pair mean, then the
weighted shortest path through adjacent zones, then a seeded uniform draw
within the 3-sigma bounds of the city-wide distribution.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .ingestion import WEEKDAYS, WEEKPART, AreaStatsTable, TimeBucket, ZoneGraph

# city-wide average cruising minutes by month (NYC 2020); std is not reported
DEFAULT_CRUISE_MEAN = {1: 10.0, 2: 9.0, 3: 11.0, 4: 14.0, 5: 15.0, 6: 12.0}
DEFAULT_CRUISE_STD = 4.0

_KIND_CODE = {"delivery": 0, "cruise": 1}
_DAY_CODE = {k: i for i, k in enumerate(WEEKPART + WEEKDAYS)}


def dijkstra(adjacency: dict[int, dict[int, float]], source: int) -> dict[int, float]:
    """Single-source shortest distances; equal-distance ties pop smallest id first."""
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in sorted(adjacency.get(u, {}).items()):
            if w < 0:
                raise ValueError("negative edge weight")
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


@dataclass
class TravelTimeModel:
    graph: ZoneGraph
    pair_delivery_means: dict[tuple[int, int, TimeBucket], float]
    pair_cruise_means: dict[tuple[int, int, TimeBucket], float]
    mu_del: float
    sigma_del: float
    mu_cru: float
    sigma_cru: float
    rng_seed: int = 0
    durations: np.ndarray = field(default_factory=lambda: np.empty(0))
    pair_delivery_counts: dict[tuple[int, int, TimeBucket], int] = field(default_factory=dict)
    pair_cruise_counts: dict[tuple[int, int, TimeBucket], int] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.mu_del > 0 and self.mu_cru > 0):
            raise ValueError("city-wide mean delivery and cruising times must be positive")
        if self.sigma_del < 0 or self.sigma_cru < 0:
            raise ValueError("standard deviations must be non-negative")
        for table in (self.pair_delivery_means, self.pair_cruise_means):
            if any(not v > 0 for v in table.values()):
                raise ValueError("stored pair means must be positive")
        self._components = self.graph.components()
        self._paths: dict[tuple, dict[int, float]] = {}
        self._draws: dict[tuple, float] = {}

    # bounds of the uniform fallback
    @property
    def lb_del(self) -> float:
        return self.mu_del - 3.0 * self.sigma_del

    @property
    def ub_del(self) -> float:
        return self.mu_del + 3.0 * self.sigma_del

    @property
    def lb_cru(self) -> float:
        return self.mu_cru - 3.0 * self.sigma_cru

    @property
    def ub_cru(self) -> float:
        return self.mu_cru + 3.0 * self.sigma_cru

    def connected(self, a: int, b: int) -> bool:
        return self._components[a] == self._components[b]

    def _edge_weights(self, kind: str, bucket: TimeBucket) -> dict[int, dict[int, float]]:
        means = self.pair_delivery_means if kind == "delivery" else self.pair_cruise_means
        counts = self.pair_delivery_counts if kind == "delivery" else self.pair_cruise_counts
        fallback = self.mu_del if kind == "delivery" else self.mu_cru
        adj: dict[int, dict[int, float]] = {z: {} for z in self.graph.zones}
        for a, b in self.graph.edges():
            obs = [(means[k], counts.get(k, 1)) for k in ((a, b, bucket), (b, a, bucket)) if k in means]
            if obs:
                w = sum(m * n for m, n in obs) / sum(n for _, n in obs)
            else:
                w = fallback
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def shortest(self, kind: str, source: int, bucket: TimeBucket) -> dict[int, float]:
        key = (kind, source, bucket)
        if key not in self._paths:
            wkey = ("weights", kind, bucket)
            if wkey not in self._paths:
                self._paths[wkey] = self._edge_weights(kind, bucket)
            self._paths[key] = dijkstra(self._paths[wkey], source)
        return self._paths[key]

    def _uniform(self, kind: str, a: int, b: int, bucket: TimeBucket) -> float:
        key = (kind, a, b, bucket)
        if key not in self._draws:
            lo, hi = (self.lb_del, self.ub_del) if kind == "delivery" else (self.lb_cru, self.ub_cru)
            seq = np.random.SeedSequence(
                entropy=self.rng_seed,
                spawn_key=(_KIND_CODE[kind], a, b, bucket.month, _DAY_CODE[bucket.day_kind], bucket.hour),
            )
            self._draws[key] = float(np.random.default_rng(seq).uniform(max(0.0, lo), hi))
        return self._draws[key]

    def delivery_time(self, pickup: int, dropoff: int, bucket: TimeBucket) -> float:
        mean = self.pair_delivery_means.get((pickup, dropoff, bucket))
        if mean is not None:
            return mean
        if pickup == dropoff:
            # an intra-zone trip still takes time; the path length would be 0
            return self.mu_del
        if self.connected(pickup, dropoff):
            return self.shortest("delivery", pickup, bucket)[dropoff]
        return self._uniform("delivery", pickup, dropoff, bucket)

    def cruising_time(self, dropoff: int, pickup: int, bucket: TimeBucket) -> float:
        mean = self.pair_cruise_means.get((dropoff, pickup, bucket))
        if mean is not None:
            return mean
        if dropoff == pickup:
            return 0.0
        if self.connected(dropoff, pickup):
            return self.shortest("cruise", dropoff, bucket)[pickup]
        return self._uniform("cruise", dropoff, pickup, bucket)

    def delivery_matrix(self, bucket: TimeBucket) -> np.ndarray:
        z = self.graph.zones
        return np.array([[self.delivery_time(p, d, bucket) for d in z] for p in z])

    def cruise_matrix(self, bucket: TimeBucket) -> np.ndarray:
        z = self.graph.zones
        return np.array([[self.cruising_time(d, p, bucket) for p in z] for d in z])


def build_travel_model(stats: AreaStatsTable, graph: ZoneGraph, month: int,
                       cruise_mean: float | None = None, cruise_std: float | None = None,
                       seed: int = 0) -> TravelTimeModel:
    """Travel-time model for one month of ``stats``.

    City-wide cruising statistics come from driver gaps when the data had
    driver ids, otherwise from ``cruise_mean``/``cruise_std`` (defaulting to
    the published monthly averages).
    """
    if month not in stats.global_delivery:
        raise ValueError(f"no records for month {month}")
    gdel = stats.global_delivery[month]
    gcru = stats.global_cruise.get(month)
    if gcru is not None and gcru.count >= 2:
        mu_cru, sigma_cru = gcru.mean, gcru.std
    else:
        mu_cru = cruise_mean if cruise_mean is not None else DEFAULT_CRUISE_MEAN.get(month, 10.0)
        sigma_cru = cruise_std if cruise_std is not None else DEFAULT_CRUISE_STD
    return TravelTimeModel(
        graph=graph,
        pair_delivery_means={k: s.mean for k, s in stats.delivery_pairs.items() if k[2].month == month},
        pair_cruise_means={k: s.mean for k, s in stats.cruise_pairs.items() if k[2].month == month},
        pair_delivery_counts={k: s.count for k, s in stats.delivery_pairs.items() if k[2].month == month},
        pair_cruise_counts={k: s.count for k, s in stats.cruise_pairs.items() if k[2].month == month},
        mu_del=gdel.mean,
        sigma_del=gdel.std,
        mu_cru=mu_cru,
        sigma_cru=sigma_cru,
        rng_seed=seed,
        durations=np.asarray(stats.durations.get(month, []), dtype=float),
    )


def coverage_fraction(samples, mean: float | None = None, std: float | None = None) -> float:
    """Fraction of ``samples`` inside ``mean +/- 3 std`` (fitted when not given)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    mu = x.mean() if mean is None else mean
    sd = x.std() if std is None else std
    return float(np.mean((x >= mu - 3 * sd) & (x <= mu + 3 * sd)))


def coverage_check(model: TravelTimeModel) -> float:
    return coverage_fraction(model.durations, model.mu_del, model.sigma_del)
