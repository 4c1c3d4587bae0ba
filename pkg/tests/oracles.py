"""Independent reference computations used to derive and cross-check test values.

Nothing here imports the algorithmic code under test; inputs are plain arrays.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def route_value(zones, t, inc, exp_del, exp_cru, gate, first_gate, prev=None):
    """Expected earnings of the legs whose start time lies before ``t``."""
    zones = list(zones)
    starts, clock = [], 0.0
    for j, z in enumerate(zones):
        starts.append(clock)
        nxt = zones[j + 1] if j + 1 < len(zones) else None
        clock += exp_del[z] + (exp_cru[z][nxt] if nxt is not None else 0.0)
    total = 0.0
    for j, z in enumerate(zones):
        if starts[j] >= t:
            break
        before = zones[j - 1] if j > 0 else prev
        g = first_gate[z] if before is None else gate[before][z]
        income = 0.0 if math.isnan(inc[z]) else inc[z]
        total += g * income * exp_del[z]
    return total


def all_routes(neighbors, start, t, exp_del, exp_cru, prev=None):
    """Recursive enumeration of admissible routes that exhaust ``t``."""
    out = []

    def grow(route, clock, before):
        cur = route[-1]
        opts = [a for a in neighbors[cur] if a != before] or list(neighbors[cur])
        if clock >= t or not opts:
            out.append(tuple(route))
            return
        for a in opts:
            grow(route + [a], clock + exp_del[cur] + exp_cru[cur][a], cur)

    grow([start], 0.0, prev)
    return out


def policy_enumeration_q(successors, reward, gate, gamma):
    """Optimal state values by solving every deterministic policy exactly."""
    m = len(successors)
    choices = [range(len(s)) if s else [None] for s in successors]
    best = np.full(m, -np.inf)
    for pol in itertools.product(*choices):
        p = np.zeros((m, m))
        r = np.zeros(m)
        for s, k in enumerate(pol):
            if k is None:
                continue
            p[s, successors[s][k]] = 1.0
            r[s] = reward[s][k] * gate[s][k]
        v = np.linalg.solve(np.eye(m) - gamma * p, r)
        best = np.maximum(best, v)
    q = [[reward[s][k] * gate[s][k] + gamma * best[a] for k, a in enumerate(successors[s])] for s in range(m)]
    return q, best


def td_reference(successors, reward, gate, gamma, eta, decay, iterations, seed, start, block=4096, every=10_000):
    """Straight-line Q-learning with the same draw layout; returns per-step values."""
    rng = np.random.default_rng(seed)
    q = [[0.0] * len(s) for s in successors]
    draws = np.empty((0, 3))
    s = start
    out = []
    for i in range(iterations):
        if i % block == 0:
            draws = rng.random((block, 3))
        u = draws[i % block]
        step = eta / (1.0 + decay * (i // every))
        k = int(u[0] * len(successors[s]))
        a = successors[s][k]
        r = reward[s][k] if u[1] < gate[s][k] else 0.0
        q[s][k] = q[s][k] + step * (r + gamma * max(q[a]) - q[s][k])
        out.append((i + 1, s, k, r, q[s][k]))
        s = a
    return out, q


def mlp_loss(theta, x, y, n_in, hidden):
    """Mean binary cross-entropy of a [n_in, hidden, 1] ReLU/logistic net."""
    i = 0
    w1 = theta[i:i + hidden * n_in].reshape(hidden, n_in); i += hidden * n_in
    b1 = theta[i:i + hidden]; i += hidden
    w2 = theta[i:i + hidden]; i += hidden
    b2 = theta[i]
    h = np.maximum(0.0, x @ w1.T + b1)
    z = h @ w2 + b2
    p = 1.0 / (1.0 + np.exp(-z))
    eps = 1e-300
    return float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


def central_differences(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
