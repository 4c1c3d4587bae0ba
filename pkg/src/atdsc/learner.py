"""Off-policy TD control with periodic self-checks and restarts.

The Q table is a list of rows, one per zone index; row ``s`` is aligned with
``model.neighbors[s]`` so ``q[s][k]`` is the value of moving from ``s`` to
``neighbors[s][k]``.

Random numbers come from a single stream drawn in fixed blocks of
``(action, reward, explore)`` uniforms indexed by the global iteration, so
the trajectory never depends on where the checks happen.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .evaluation import Route, candidates, evaluate_route, extend_route
from .mdp import MdpModel

QTable = list[list[float]]

DRAW_BLOCK = 4096
RUN_LOG_HEADER = ["iteration", "Γ", "F_c", "k", "candidate_profit", "preserved_profit"]


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.9
    eta: float = 0.01
    eta_decay: float = 0.01
    decay_every: int = 10_000
    iterations: int = 300_000
    tau: int | None = 1000  # None disables the self-check
    budget: float = 60.0  # minutes
    seed: int = 0
    metric: str = "income"
    epsilon: float | None = None  # None: uniform behaviour policy

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.eta_decay < 0:
            raise ValueError("eta_decay must be non-negative")
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be at least 1 (or None to disable checks)")
        if not self.budget > 0:
            raise ValueError("time budget must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.metric not in ("income", "occupancy"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass
class TabularMdp:
    """Successor lists with per-action reward value and collection probability."""

    successors: list[list[int]]
    reward: list[list[float]]
    gate: list[list[float]]

    @classmethod
    def from_model(cls, model: MdpModel, metric: str = "income") -> "TabularMdp":
        rewards, gates = model.reward_tables(metric)
        return cls([list(s) for s in model.neighbors], rewards, gates)

    def __len__(self) -> int:
        return len(self.successors)

    def max_reward(self) -> float:
        return max((abs(r) for row in self.reward for r in row), default=0.0)

    def blank_q(self) -> QTable:
        return [[0.0] * len(s) for s in self.successors]


def q_update(q: QTable, s: int, k: int, s_next: int, reward_draw: float, gamma: float, eta: float) -> QTable:
    """One Q-learning step on ``q[s][k]`` (in place); returns ``q``."""
    row = q[s_next]
    target = reward_draw + gamma * (max(row) if row else 0.0)
    q[s][k] += eta * (target - q[s][k])
    return q


def step_size(eta: float, decay: float, iteration: int, every: int = 10_000) -> float:
    """Step size in force at ``iteration`` (0-based)."""
    return eta / (1.0 + decay * (iteration // every))


class _Draws:
    """Sequential blocks of ``(action, reward, explore)`` uniforms."""

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self._block = -1
        self._cols = None

    def block(self, b: int):
        while self._block < b:
            u = self._rng.random((DRAW_BLOCK, 3))
            self._cols = (u[:, 0].tolist(), u[:, 1].tolist(), u[:, 2].tolist())
            self._block += 1
        if self._block != b:
            raise RuntimeError("draw blocks must be consumed in order")
        return self._cols


def _td_steps(tab: TabularMdp, q: QTable, s: int, start: int, begin: int, end: int,
              cfg: LearnerConfig, draws: _Draws, trace: list | None) -> tuple[int, int]:
    """Iterations ``begin..end-1``; returns the final state and teleport count."""
    succ, rew, gate = tab.successors, tab.reward, tab.gate
    gamma, eps = cfg.gamma, cfg.epsilon
    teleports = 0
    i = begin
    while i < end:
        ua, ug, ue = draws.block(i // DRAW_BLOCK)
        off = i - (i // DRAW_BLOCK) * DRAW_BLOCK
        stop = min(end, i - off + DRAW_BLOCK)
        eta = step_size(cfg.eta, cfg.eta_decay, i, cfg.decay_every)
        next_decay = (i // cfg.decay_every + 1) * cfg.decay_every
        for j in range(i, stop):
            if j == next_decay:
                eta = step_size(cfg.eta, cfg.eta_decay, j, cfg.decay_every)
                next_decay += cfg.decay_every
            row = succ[s]
            n = len(row)
            if n == 0:
                s = start
                teleports += 1
                continue
            u = j - i + off
            qs = q[s]
            if eps is not None and ue[u] >= eps:
                k = max(range(n), key=qs.__getitem__)
            else:
                k = int(ua[u] * n)
            a = row[k]
            r = rew[s][k] if ug[u] < gate[s][k] else 0.0
            qa = q[a]
            qs[k] += eta * (r + gamma * (max(qa) if qa else 0.0) - qs[k])
            if trace is not None:
                trace.append((j + 1, s, k, r, qs[k]))
            s = a
        i = stop
    return s, teleports


def greedy_successor(q_row: Sequence[float], successors: Sequence[int], options: Sequence[int]) -> int:
    """Highest-valued option; ties go to the smallest zone index."""
    pos = {a: k for k, a in enumerate(successors)}
    return min(options, key=lambda a: (-q_row[pos[a]], a))


def generate_path(q: QTable, start: int, t: float, model: MdpModel, prev: int | None = None) -> Route:
    """Greedy route from ``start`` until the expected time reaches ``t``."""
    def choose(cur, _prev, options):
        return greedy_successor(q[cur], model.neighbors[cur], options)

    zones = extend_route(model, start, t, choose, prev)
    return evaluate_route(zones, t, model, prev)


# --------------------------------------------------------------------------
# Self-check
# --------------------------------------------------------------------------

@dataclass
class SelfCheckState:
    failure_count: float  # F_c; math.inf never restarts
    failures: int = 0  # Γ
    restarts: int = 0  # k
    best_route: Route | None = None
    best_q: QTable | None = None
    best_profit: float = -math.inf

    def __post_init__(self):
        if not self.failure_count >= 0:
            raise ValueError("failure count must be non-negative")


def self_check(state: SelfCheckState, route: Route, q: QTable, profit: float) -> tuple[SelfCheckState, bool]:
    """Compare a candidate with the preserved best.

    Returns the new state and whether the learner must restart from a blank
    table. The preserved route and table survive restarts.
    """
    if profit > state.best_profit:
        return replace(state, failures=0, best_route=route, best_q=[row[:] for row in q],
                       best_profit=profit), False
    if state.failures < state.failure_count:
        return replace(state, failures=state.failures + 1), False
    return replace(state, failures=0, restarts=state.restarts + 1), True


@dataclass(frozen=True)
class CheckRecord:
    iteration: int
    failures: int
    failure_count: float
    restarts: int
    candidate_profit: float
    preserved_profit: float


@dataclass
class LearnResult:
    route: Route
    q: QTable
    log: list[CheckRecord] = field(default_factory=list)
    restarts: int = 0
    teleports: int = 0
    final_q: QTable | None = None

    @property
    def profit(self) -> float:
        return self.route.profit

    def rounds_to_best(self) -> int:
        """1-based index of the check that first reached the final preserved value
        (0 when there were no checks)."""
        if not self.log:
            return 0
        final = self.log[-1].preserved_profit
        for n, rec in enumerate(self.log, 1):
            if rec.preserved_profit == final:
                return n
        return len(self.log)


def write_run_log(log: Sequence[CheckRecord], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RUN_LOG_HEADER)
    for r in log:
        fc = "inf" if math.isinf(r.failure_count) else int(r.failure_count)
        w.writerow([r.iteration, r.failures, fc, r.restarts, repr(float(r.candidate_profit)),
                    repr(float(r.preserved_profit))])


def _check_bound(q: QTable, tab: TabularMdp, gamma: float) -> None:
    bound = 2.0 * tab.max_reward() / (1.0 - gamma) + 1e-9
    for row in q:
        for v in row:
            if not (math.isfinite(v) and abs(v) <= bound):
                raise FloatingPointError(f"Q value {v!r} outside the bound {bound:.6g}")


def _start_index(model: MdpModel, start: int) -> int:
    if not 0 <= start < len(model):
        raise ValueError(f"start state index {start} is outside the model")
    return start


def run_atdsc(model: MdpModel, start: int, config: LearnerConfig = LearnerConfig(),
              failure_count: float = 8, prev: int | None = None, trace: list | None = None) -> LearnResult:
    """Learn from ``start`` (zone index) and return the preserved best route.

    Every ``config.tau`` iterations the greedy route of the current table is
    scored on ``config.metric``; ``failure_count`` consecutive non-improving
    checks followed by one more trigger a restart from a blank table.
    """
    start = _start_index(model, start)
    tab = TabularMdp.from_model(model, config.metric)
    q = tab.blank_q()
    draws = _Draws(config.seed)
    state = SelfCheckState(failure_count)
    log: list[CheckRecord] = []
    s, it, teleports = start, 0, 0
    tau = config.tau or config.iterations or 1
    while it < config.iterations:
        end = min(config.iterations, (it // tau + 1) * tau)
        s, tp = _td_steps(tab, q, s, start, it, end, config, draws, trace)
        teleports += tp
        it = end
        if config.tau and it % config.tau == 0:
            _check_bound(q, tab, config.gamma)
            route = generate_path(q, start, config.budget, model, prev)
            profit = route.score(config.metric)
            state, restart = self_check(state, route, q, profit)
            log.append(CheckRecord(it, state.failures, state.failure_count, state.restarts,
                                   profit, state.best_profit))
            if restart:
                q = tab.blank_q()
                s = start
    if state.best_route is None:
        route = generate_path(q, start, config.budget, model, prev)
        return LearnResult(route, q, log, state.restarts, teleports, q)
    return LearnResult(state.best_route, state.best_q, log, state.restarts, teleports, q)


def run_td_plain(model: MdpModel, start: int, config: LearnerConfig = LearnerConfig(),
                 prev: int | None = None, trace: list | None = None) -> LearnResult:
    """The same TD loop without checks; the route comes from the final table."""
    start = _start_index(model, start)
    tab = TabularMdp.from_model(model, config.metric)
    q = tab.blank_q()
    _, teleports = _td_steps(tab, q, start, start, 0, config.iterations, config, _Draws(config.seed), trace)
    _check_bound(q, tab, config.gamma)
    route = generate_path(q, start, config.budget, model, prev)
    return LearnResult(route, q, [], 0, teleports, q)


# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def brute_force_q(tab: TabularMdp, gamma: float, tol: float = 1e-10, max_states: int = 12,
                  max_sweeps: int = 100_000) -> tuple[QTable, list[float], list[int | None]]:
    """Value iteration on expected rewards; returns ``(q*, v*, greedy action index)``."""
    if len(tab) > max_states:
        raise ValueError(f"brute force limited to {max_states} states, got {len(tab)}")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    expected = [[r * g for r, g in zip(rs, gs)] for rs, gs in zip(tab.reward, tab.gate)]
    v = [0.0] * len(tab)
    q = tab.blank_q()
    for _ in range(max_sweeps):
        q = [[expected[s][k] + gamma * v[a] for k, a in enumerate(tab.successors[s])]
             for s in range(len(tab))]
        new_v = [max(row) if row else 0.0 for row in q]
        delta = max(abs(x - y) for x, y in zip(new_v, v))
        v = new_v
        if delta < tol:
            break
    else:
        raise RuntimeError("value iteration did not converge")
    policy = [min(range(len(row)), key=lambda k: (-row[k], tab.successors[s][k])) if row else None
              for s, row in enumerate(q)]
    return q, v, policy


def policy_values(tab: TabularMdp, policy: Sequence[int | None], gamma: float) -> list[float]:
    """Exact state values of a deterministic policy (linear solve)."""
    m = len(tab)
    p = np.zeros((m, m))
    r = np.zeros(m)
    for s, k in enumerate(policy):
        if k is None:
            continue
        p[s, tab.successors[s][k]] = 1.0
        r[s] = tab.reward[s][k] * tab.gate[s][k]
    return np.linalg.solve(np.eye(m) - gamma * p, r).tolist()


def td0_state_value(tab: TabularMdp, policy: Sequence[int | None] | None = None, episodes: int = 200,
                    horizon: int = 50, gamma: float = 0.9, eta: float = 0.05, seed: int = 0,
                    start: int | None = None) -> list[float]:
    """TD(0) estimate of the state values of ``policy`` (uniform when None).

    Episodes start at ``start`` or a uniformly drawn state and end at
    ``horizon`` steps or at a state without successors.
    """
    rng = np.random.default_rng(seed)
    m = len(tab)
    v = [0.0] * m
    for _ in range(episodes):
        s = start if start is not None else int(rng.integers(m))
        for _ in range(horizon):
            succ = tab.successors[s]
            if not succ:
                break
            k = policy[s] if policy is not None else int(rng.integers(len(succ)))
            a = succ[k]
            r = tab.reward[s][k] if rng.random() < tab.gate[s][k] else 0.0
            v[s] += eta * (r + gamma * v[a] - v[s])
            s = a
    return v


def zone_q(q: QTable, model: MdpModel) -> dict[tuple[int, int], float]:
    """``(zone id, successor zone id) -> value``."""
    return {(model.zones[s], model.zones[a]): q[s][k]
            for s, row in enumerate(model.neighbors) for k, a in enumerate(row)}


def admissible_route(route: Route, model: MdpModel, prev: int | None = None) -> bool:
    """Consecutive zones adjacent and no avoidable immediate reversal."""
    before = prev
    for a, b in zip(route.zones, route.zones[1:]):
        if b not in candidates(model, a, before):
            return False
        before = a
    return True
