"""Route evaluation and the income / occupancy metrics.

A route is a sequence of zone indices of one :class:`~atdsc.mdp.MdpModel`.
Leg ``j`` picks up at ``r[j]`` (delivery minutes ``exp_del``) and then
cruises from the drop-off to ``r[j + 1]``.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .mdp import MdpModel


@dataclass(frozen=True)
class Leg:
    zone: int
    gate: float
    delivery: float
    cruise: float
    earning: float
    occupied: float

    @property
    def minutes(self) -> float:
        return self.delivery + self.cruise


@dataclass(frozen=True)
class Route:
    zones: tuple[int, ...]
    legs: tuple[Leg, ...]
    profit: float
    elapsed: float
    budget: float
    truncated: bool = False

    @property
    def overshoot(self) -> float:
        """Minutes the last admitted leg runs past the budget."""
        return max(0.0, self.elapsed - self.budget)

    @property
    def occupancy(self) -> float:
        return occupancy_rate([l.occupied for l in self.legs],
                              [l.minutes - l.occupied for l in self.legs])

    def score(self, metric: str = "income") -> float:
        if metric == "income":
            return self.profit
        if metric == "occupancy":
            return self.occupancy
        raise ValueError(f"unknown metric {metric!r}")

    def zone_ids(self, model: MdpModel) -> list[int]:
        return [model.zones[i] for i in self.zones]


def candidates(model: MdpModel, cur: int, prev: int | None) -> tuple[int, ...]:
    """Admissible successors of ``cur``: neighbours minus an immediate reversal,
    unless reversing is the only way out."""
    nb = model.neighbors[cur]
    if prev is None:
        return nb
    out = tuple(a for a in nb if a != prev)
    return out or nb


def evaluate_route(zones: Sequence[int], t: float, model: MdpModel, prev: int | None = None) -> Route:
    """Expected earnings of ``zones`` within ``t`` minutes.

    The budget is checked before each leg, so the leg that crosses ``t`` is
    still counted. ``prev`` is the zone the driver came from (None: the
    driver is already at ``zones[0]``).
    """
    zones = tuple(int(z) for z in zones)
    if not zones:
        raise ValueError("empty route")
    elapsed, profit, count = 0.0, 0.0, 0
    legs = []
    last = prev
    while elapsed < t and count < len(zones):
        z = zones[count]
        nxt = zones[count + 1] if count + 1 < len(zones) else None
        gate = model.gate(last, z)
        delivery = float(model.exp_del[z])
        cruise = float(model.exp_cru[z, nxt]) if nxt is not None else 0.0
        earning = model.earning(last, z)
        legs.append(Leg(z, gate, delivery, cruise, earning, model.occupied(last, z)))
        profit += earning
        elapsed += delivery + cruise
        last = z
        count += 1
    truncated = elapsed < t
    return Route(zones, tuple(legs), profit, elapsed, float(t), truncated)


def eval_route(zones: Sequence[int], t: float, model: MdpModel, prev: int | None = None) -> float:
    return evaluate_route(zones, t, model, prev).profit


def extend_route(model: MdpModel, start: int, t: float, choose, prev: int | None = None,
                 max_legs: int = 100_000) -> tuple[int, ...]:
    """Grow a route from ``start`` with ``choose(cur, prev, options)`` until the
    accumulated expected time reaches ``t``."""
    route = [start]
    elapsed = 0.0
    while elapsed < t and len(route) <= max_legs:
        cur = route[-1]
        options = candidates(model, cur, prev)
        if not options:
            break
        nxt = choose(cur, prev, options)
        elapsed += model.leg_time(cur, nxt)
        route.append(nxt)
        prev = cur
    return tuple(route)


def enumerate_routes(model: MdpModel, start: int, t: float, prev: int | None = None,
                     limit: int = 2_000_000):
    """Yield every admissible route from ``start`` that exhausts the budget."""
    stack = [((start,), 0.0, prev)]
    produced = 0
    while stack:
        route, elapsed, before = stack.pop()
        cur = route[-1]
        options = candidates(model, cur, before)
        if elapsed >= t or not options:
            produced += 1
            if produced > limit:
                raise RuntimeError("route enumeration limit exceeded")
            yield route
            continue
        for a in reversed(options):
            stack.append((route + (a,), elapsed + model.leg_time(cur, a), cur))


def best_route_exhaustive(model: MdpModel, start: int, t: float, prev: int | None = None,
                          metric: str = "income") -> Route:
    best = None
    for zones in enumerate_routes(model, start, t, prev):
        r = evaluate_route(zones, t, model, prev)
        if best is None or r.score(metric) > best.score(metric):
            best = r
    return best


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def hourly_income(daily_profits: Sequence[float], hours: int = 24) -> tuple[float, float]:
    """Mean hourly income over runs and its standard error (sample variance)."""
    if len(daily_profits) == 0:
        raise ValueError("no runs")
    return mean_se([float(d) / hours for d in daily_profits])


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    # statistics works in exact rationals, so identical runs give SE exactly 0
    x = [float(v) for v in values]
    se = statistics.stdev(x) / math.sqrt(len(x)) if len(x) > 1 else 0.0
    return statistics.fmean(x), se


def weekly_income(hourly_by_day: Sequence[float], hours_per_day: float = 10.0) -> float:
    """Seven daily hourly-income values (Monday..Sunday) -> weekly income."""
    if len(hourly_by_day) != 7:
        raise ValueError("need one hourly value per weekday")
    return float(sum(hours_per_day * h for h in hourly_by_day))


class Improvement(NamedTuple):
    value: float  # ln(ratio); -inf when the ratio is not positive
    ratio: float  # (A - B) / B
    flagged: bool


def log_improvement(weekly_method: float, weekly_baseline: float) -> Improvement:
    if not weekly_baseline > 0:
        raise ValueError("baseline weekly income must be positive")
    ratio = (weekly_method - weekly_baseline) / weekly_baseline
    if ratio <= 0:
        return Improvement(-math.inf, ratio, True)
    return Improvement(math.log(ratio), ratio, False)


def occupancy_rate(delivery: Sequence[float], cruising: Sequence[float]) -> float:
    d = float(np.sum(delivery))
    c = float(np.sum(cruising))
    if d + c <= 0:
        return 0.0
    return d / (d + c)
