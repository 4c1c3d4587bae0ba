"""Reward and action-reward-probability tables for the zone MDP.

States are zones, an action picks the next pickup zone among the current
zone's neighbours. Per bucket the model precomputes, with the drop-off zone
marginalised over the empirical drop-off distribution of the pickup zone:

* ``exp_del[p]``     expected delivery minutes for a pickup at ``p``
* ``exp_cru[s, a]``  expected cruising minutes from the drop-off of ``s`` to ``a``
* ``exp_gate[s, a]`` expected probability of collecting the reward at ``a``
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np

from .ingestion import AreaStatsTable, TimeBucket, ZoneGraph
from .travel_time import TravelTimeModel, build_travel_model


@dataclass(frozen=True)
class MdpConfig:
    alpha1: float = 0.5
    alpha2: float = 0.5
    beta: float = 0.1
    omega_abnormal: float = 0.1
    lam: float = 0.5
    abnormal_threshold: float = 0.8

    def __post_init__(self):
        if abs(self.alpha1 + self.alpha2 - 1.0) > 1e-12:
            raise ValueError("alpha1 + alpha2 must equal 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not 0 < self.omega_abnormal <= 1:
            raise ValueError("omega_abnormal must lie in (0, 1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")


# --------------------------------------------------------------------------
# Income cleaning
# --------------------------------------------------------------------------

class CleanedIncome(dict):
    """``(zone, bucket) -> USD/min`` after cleaning, with per-step flags.

    Passing an instance back through :func:`clean_income` returns it as is,
    which keeps cleaning idempotent.
    """

    def __init__(self, values=(), local_capped=(), global_capped=(), scaled=()):
        super().__init__(values)
        self.local_capped = frozenset(local_capped)
        self.global_capped = frozenset(global_capped)
        self.scaled = frozenset(scaled)


def global_cap(inc: float, mu: float, sigma: float) -> float:
    return min(inc, mu + 3.0 * sigma)


def clean_income(raw: Mapping[tuple[int, TimeBucket], float],
                 pickups: Mapping[tuple[int, TimeBucket], int] | None = None,
                 minutes: Mapping[tuple[int, TimeBucket], float] | None = None,
                 lam: float = 0.5,
                 income_stats: Mapping[TimeBucket, tuple[float, float]] | None = None) -> CleanedIncome:
    """Clean a raw minute-income table.

    1. local cap: a cell's income is capped at the zone's average minute
       income over every bucket of the same month (total payment over total
       delivery minutes);
    2. global cap at ``mu + 3 sigma`` of the bucket's incomes across zones;
    3. zones with fewer pickups than the bucket's cross-zone average are
       scaled by ``lam``.

    NaN cells (no trips) stay NaN. ``income_stats`` overrides the per-bucket
    ``(mu, sigma)`` of step 2.
    """
    if isinstance(raw, CleanedIncome):
        return raw
    if not raw:
        raise ValueError("raw income table is empty")
    pickups = pickups or {}
    minutes = minutes or {}

    pay_sum: dict[tuple[int, int], float] = {}
    min_sum: dict[tuple[int, int], float] = {}
    for (z, b), inc in raw.items():
        t = minutes.get((z, b), 0.0)
        if not math.isnan(inc) and t > 0:
            zm = (z, b.month)
            pay_sum[zm] = pay_sum.get(zm, 0.0) + inc * t
            min_sum[zm] = min_sum.get(zm, 0.0) + t

    local_capped, out = set(), {}
    for (z, b), inc in raw.items():
        zm = (z, b.month)
        if not math.isnan(inc) and zm in min_sum:
            target = pay_sum[zm] / min_sum[zm]
            if inc > target:
                inc = target
                local_capped.add((z, b))
        out[(z, b)] = inc

    by_bucket: dict[TimeBucket, list[tuple[int, TimeBucket]]] = {}
    for key in out:
        by_bucket.setdefault(key[1], []).append(key)

    global_capped, scaled = set(), set()
    for b, keys in by_bucket.items():
        vals = np.array([out[k] for k in keys if not math.isnan(out[k])])
        if income_stats is not None and b in income_stats:
            mu, sigma = income_stats[b]
        elif vals.size:
            mu, sigma = float(vals.mean()), float(vals.std())
        else:
            mu = sigma = math.nan
        avg_pickups = np.mean([pickups.get(k, 0) for k in keys])
        for k in keys:
            inc = out[k]
            if math.isnan(inc):
                continue
            capped = global_cap(inc, mu, sigma)
            if capped < inc:
                global_capped.add(k)
            if pickups and pickups.get(k, 0) < avg_pickups:
                capped *= lam
                scaled.add(k)
            out[k] = capped
    return CleanedIncome(out, local_capped, global_capped, scaled)


# --------------------------------------------------------------------------
# Scalar building blocks
# --------------------------------------------------------------------------

def reward(inc: float, t_del: float, t_cru: float) -> float:
    """Minute income weighted by the share of time spent delivering."""
    if inc is None or math.isnan(inc):
        return 0.0
    total = t_del + t_cru
    return inc * t_del / total if total > 0 else 0.0


def p_cru(t_cru: float, t_min: float, t_max: float, connected: bool = True, beta: float = 0.1) -> float:
    if not connected:
        return beta
    if t_max <= t_min:
        return 1.0
    return 1.0 - beta * abs(t_cru - t_min) / (t_max - t_min)


def p_pick(counts) -> np.ndarray:
    """Min-max normalised pickup counts; all ones when every count is equal."""
    c = np.asarray(counts, dtype=float)
    lo, hi = c.min(), c.max()
    if hi == lo:
        return np.ones_like(c)
    return (c - lo) / (hi - lo)


def flag_abnormal(current: Mapping[int, float], prior: Mapping[int, float],
                  threshold: float = 0.8, omega_abnormal: float = 0.1) -> tuple[dict[int, float], int]:
    """Zones whose pickups fall below ``threshold`` x prior get ``omega_abnormal``."""
    omega = {}
    for z in sorted(current):
        omega[z] = omega_abnormal if current[z] < threshold * prior.get(z, 0) else 1.0
    n_normal = sum(1 for w in omega.values() if w == 1.0)
    return omega, n_normal


def p_gr(omega: float, pc: float, pp: float, alpha1: float = 0.5, alpha2: float = 0.5) -> float:
    return min(1.0, max(0.0, omega * (alpha1 * pc + alpha2 * pp)))


def action_reward_probability(reward_value: float, gate: float) -> list[tuple[float, float]]:
    """Outcome distribution ``[(reward, p), (0, 1 - p)]`` of one action."""
    return [(reward_value, gate), (0.0, 1.0 - gate)]


# --------------------------------------------------------------------------
# Bucket model
# --------------------------------------------------------------------------

@dataclass
class MdpModel:
    """One time bucket of the zone MDP; arrays are indexed by zone position."""

    zones: tuple[int, ...]
    neighbors: tuple[tuple[int, ...], ...]
    inc: np.ndarray
    exp_del: np.ndarray
    exp_cru: np.ndarray
    exp_gate: np.ndarray
    first_gate: np.ndarray
    p_pick: np.ndarray
    pickups: np.ndarray
    omega: np.ndarray = None
    bucket: TimeBucket | None = None
    # full (drop-off, pickup) tables, kept for inspection
    dropoff: np.ndarray | None = None
    t_del: np.ndarray | None = None
    t_cru: np.ndarray | None = None
    p_cru: np.ndarray | None = None
    p_gr: np.ndarray | None = None
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        m = len(self.zones)
        if self.omega is None:
            self.omega = np.ones(m)
        self._index = {z: i for i, z in enumerate(self.zones)}
        if np.any(self.exp_del <= 0):
            raise ValueError("expected delivery times must be positive")
        gates = np.concatenate([self.exp_gate.ravel(), self.first_gate])
        if np.any(gates < 0) or np.any(gates > 1):
            raise ValueError("action-reward probabilities must lie in [0, 1]")

    @classmethod
    def from_arrays(cls, zones, neighbors, inc, exp_del, exp_cru, exp_gate,
                    first_gate=None, p_pick=None, pickups=None, **kw) -> "MdpModel":
        """Build directly from expected quantities (tests, toy instances).

        ``neighbors`` maps zone ids to neighbour ids; arrays are zone-ordered.
        """
        zones = tuple(zones)
        idx = {z: i for i, z in enumerate(zones)}
        nb = tuple(tuple(sorted(idx[n] for n in neighbors[z])) for z in zones)
        m = len(zones)
        exp_gate = np.asarray(exp_gate, dtype=float)
        if exp_gate.ndim == 0:
            exp_gate = np.full((m, m), float(exp_gate))
        return cls(
            zones=zones,
            neighbors=nb,
            inc=np.asarray(inc, dtype=float),
            exp_del=np.asarray(exp_del, dtype=float),
            exp_cru=np.asarray(exp_cru, dtype=float),
            exp_gate=exp_gate,
            first_gate=np.ones(m) if first_gate is None else np.asarray(first_gate, dtype=float),
            p_pick=np.ones(m) if p_pick is None else np.asarray(p_pick, dtype=float),
            pickups=np.ones(m) if pickups is None else np.asarray(pickups, dtype=float),
            **kw,
        )

    def __len__(self) -> int:
        return len(self.zones)

    def index(self, zone: int) -> int:
        try:
            return self._index[zone]
        except KeyError:
            raise KeyError(f"zone {zone} is not in the model") from None

    def gate(self, prev: int | None, z: int) -> float:
        return float(self.first_gate[z] if prev is None else self.exp_gate[prev, z])

    def leg_time(self, z: int, nxt: int | None) -> float:
        return float(self.exp_del[z] + (self.exp_cru[z, nxt] if nxt is not None else 0.0))

    def earning(self, prev: int | None, z: int) -> float:
        inc = self.inc[z]
        if math.isnan(inc):
            return 0.0
        return self.gate(prev, z) * float(inc) * float(self.exp_del[z])

    def occupied(self, prev: int | None, z: int) -> float:
        """Expected occupied minutes of the leg picking up at ``z``."""
        if self.pickups[z] <= 0:
            return 0.0
        return self.gate(prev, z) * float(self.exp_del[z])

    def reward_tables(self, metric: str = "income") -> tuple[list[list[float]], list[list[float]]]:
        """Per-action reward values and success probabilities, aligned with ``neighbors``."""
        rewards, gates = [], []
        for s, succ in enumerate(self.neighbors):
            rs, gs = [], []
            for a in succ:
                d, c = float(self.exp_del[a]), float(self.exp_cru[s, a])
                if metric == "income":
                    rs.append(reward(float(self.inc[a]), d, c))
                elif metric == "occupancy":
                    rs.append(d / (d + c) if self.pickups[a] > 0 else 0.0)
                else:
                    raise ValueError(f"unknown metric {metric!r}")
                gs.append(float(self.exp_gate[s, a]))
            rewards.append(rs)
            gates.append(gs)
        return rewards, gates

    def dump_csv(self, table: str, fh: IO[str]) -> None:
        """Write one table as CSV: per-zone tables ``zone,bucket,value``,
        transition tables ``from_zone,zone,bucket,value``."""
        w = csv.writer(fh, lineterminator="\n")
        bkey = self.bucket.key if self.bucket else ""
        if table in ("inc", "p_pick", "omega", "exp_del"):
            w.writerow(["zone", "bucket", "value"])
            for i, z in enumerate(self.zones):
                w.writerow([z, bkey, repr(float(getattr(self, table)[i]))])
            return
        if table == "reward":
            rewards, _ = self.reward_tables("income")
            w.writerow(["from_zone", "zone", "bucket", "value"])
            for s, succ in enumerate(self.neighbors):
                for k, a in enumerate(succ):
                    w.writerow([self.zones[s], self.zones[a], bkey, repr(rewards[s][k])])
            return
        if table == "p_gr":
            w.writerow(["from_zone", "zone", "bucket", "value"])
            src = self.p_gr if self.p_gr is not None else self.exp_gate
            for i, d in enumerate(self.zones):
                for j, p in enumerate(self.zones):
                    w.writerow([d, p, bkey, repr(float(src[i, j]))])
            return
        raise ValueError(f"unknown table {table!r}")


def cruise_probability_matrix(t_cru: np.ndarray, connected: np.ndarray, beta: float) -> np.ndarray:
    """Row ``d``: cruise probabilities to every pickup zone, normalised over the
    zones reachable from ``d`` (excluding ``d`` itself, which gets 1)."""
    m = t_cru.shape[0]
    out = np.full((m, m), beta)
    for d in range(m):
        cand = [p for p in range(m) if p != d and connected[d, p]]
        if cand:
            vals = t_cru[d, cand]
            lo, hi = float(vals.min()), float(vals.max())
            for p in cand:
                out[d, p] = p_cru(float(t_cru[d, p]), lo, hi, True, beta)
        out[d, d] = 1.0
    return out


def build_bucket_model(stats: AreaStatsTable, graph: ZoneGraph, travel: TravelTimeModel,
                       bucket: TimeBucket, income: Mapping[tuple[int, TimeBucket], float],
                       omega: Mapping[int, float], config: MdpConfig = MdpConfig()) -> MdpModel:
    zones = graph.zones
    m = len(zones)
    idx = graph.index()
    comp = graph.components()
    connected = np.array([[comp[a] == comp[b] for b in zones] for a in zones])

    counts = np.array([stats.pickup_count(z, bucket) for z in zones], dtype=float)
    pp = p_pick(counts)
    inc = np.array([income.get((z, bucket), math.nan) for z in zones], dtype=float)
    om = np.array([omega.get(z, 1.0) for z in zones], dtype=float)

    dropoff = np.zeros((m, m))
    for i, z in enumerate(zones):
        dist = stats.dropoff_dist(z, bucket)
        if dist:
            for d, p in dist.items():
                dropoff[i, idx[d]] = p
        else:
            dropoff[i, i] = 1.0

    t_del = travel.delivery_matrix(bucket)
    t_cru = travel.cruise_matrix(bucket)
    pc = cruise_probability_matrix(t_cru, connected, config.beta)
    pg = np.clip(om[None, :] * (config.alpha1 * pc + config.alpha2 * pp[None, :]), 0.0, 1.0)

    exp_del = (dropoff * t_del).sum(axis=1)
    exp_cru = dropoff @ t_cru
    exp_gate = np.clip(dropoff @ pg, 0.0, 1.0)
    first_gate = np.diag(pg).copy()
    neighbors = tuple(tuple(sorted(idx[n] for n in graph.neighbors[z])) for z in zones)
    return MdpModel(
        zones=zones, neighbors=neighbors, inc=inc, exp_del=exp_del, exp_cru=exp_cru,
        exp_gate=exp_gate, first_gate=first_gate, p_pick=pp, pickups=counts, omega=om,
        bucket=bucket, dropoff=dropoff, t_del=t_del, t_cru=t_cru, p_cru=pc, p_gr=pg,
    )


class CityModel:
    """Everything needed to produce bucket models for the months in ``stats``.

    Income is cleaned once over the whole table; anomaly flags are computed
    per month from monthly pickup totals against the prior year.
    """

    def __init__(self, stats: AreaStatsTable, graph: ZoneGraph, config: MdpConfig = MdpConfig(),
                 seed: int = 0, cruise_mean: Mapping[int, float] | float | None = None,
                 cruise_std: float | None = None, flag_anomalies: bool = True):
        self.stats = stats
        self.graph = graph
        self.config = config
        self.seed = seed
        self.flag_anomalies = flag_anomalies
        keys = list(stats.cells)
        self.income = clean_income(
            {k: stats.raw_income(*k) for k in keys},
            {k: stats.cells[k].pickups for k in keys},
            {k: stats.cells[k].minutes for k in keys},
            lam=config.lam,
        )
        self.travel: dict[int, TravelTimeModel] = {}
        for month in stats.months():
            cm = cruise_mean.get(month) if isinstance(cruise_mean, Mapping) else cruise_mean
            self.travel[month] = build_travel_model(stats, graph, month, cm, cruise_std, seed=seed)
        self._omega: dict[int, tuple[dict[int, float], int]] = {}
        self._models: dict[TimeBucket, MdpModel] = {}

    @property
    def months(self) -> list[int]:
        return self.stats.months()

    def anomaly(self, month: int) -> tuple[dict[int, float], int]:
        """``(omega by zone, N_normal)`` for ``month``."""
        if month not in self._omega:
            if self.flag_anomalies and self.stats.prior_counts:
                self._omega[month] = flag_abnormal(
                    self.stats.month_counts(month), self.stats.month_counts(month, prior=True),
                    self.config.abnormal_threshold, self.config.omega_abnormal)
            else:
                self._omega[month] = ({z: 1.0 for z in self.graph.zones}, len(self.graph.zones))
        return self._omega[month]

    def bucket_model(self, bucket: TimeBucket) -> MdpModel:
        if bucket not in self._models:
            omega, _ = self.anomaly(bucket.month)
            self._models[bucket] = build_bucket_model(
                self.stats, self.graph, self.travel[bucket.month], bucket, self.income, omega, self.config)
        return self._models[bucket]
