"""One-step greedy comparison policies."""
from __future__ import annotations

import math
from enum import Enum

from .evaluation import Route, candidates, evaluate_route, extend_route
from .mdp import MdpModel


class GreedyKind(Enum):
    MAX_PICKUP_PROBABILITY = "MPP"
    MAX_MINUTE_INCOME = "MNP"
    MIN_CRUISE_TIME = "PCD"


def _score(kind: GreedyKind, model: MdpModel, cur: int, a: int) -> float:
    """Criterion to maximise for moving ``cur -> a``."""
    if kind is GreedyKind.MAX_PICKUP_PROBABILITY:
        return float(model.p_pick[a])
    if kind is GreedyKind.MAX_MINUTE_INCOME:
        inc = float(model.inc[a])
        return -math.inf if math.isnan(inc) else inc
    return -float(model.exp_cru[cur, a])


def greedy_next(kind: GreedyKind, cur: int, model: MdpModel, prev: int | None = None) -> int | None:
    options = candidates(model, cur, prev)
    if not options:
        return None
    return min(options, key=lambda a: (-_score(kind, model, cur, a), a))


def run_greedy(kind: GreedyKind, start: int, t: float, model: MdpModel, prev: int | None = None) -> Route:
    zones = extend_route(model, start, t, lambda cur, before, _: greedy_next(kind, cur, model, before), prev)
    return evaluate_route(zones, t, model, prev)
