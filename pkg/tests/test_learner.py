import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atdsc.evaluation import best_route_exhaustive, eval_route
from atdsc.learner import (
    RUN_LOG_HEADER,
    LearnerConfig,
    SelfCheckState,
    TabularMdp,
    admissible_route,
    brute_force_q,
    generate_path,
    policy_values,
    q_update,
    run_atdsc,
    run_td_plain,
    self_check,
    step_size,
    td0_state_value,
    write_run_log,
    zone_q,
)

from conftest import ring_model
from oracles import policy_enumeration_q, td_reference


# -- single update ---------------------------------------------------------------

def test_q_update_from_blank():
    q = [[0.0, 0.0], [0.0]]
    q_update(q, 0, 1, 1, 1.0, 0.9, 0.01)
    assert q == [[0.0, 0.01], [0.0]]


def test_q_update_fixed_points():
    q = [[0.4], [0.2]]
    assert q_update([r[:] for r in q], 0, 0, 1, 3.0, 0.9, 0.0) == q
    z = [[0.0], [0.0]]
    assert q_update(z, 0, 0, 1, 0.0, 0.9, 0.5) == [[0.0], [0.0]]


def test_step_size_decays_per_epoch():
    assert step_size(0.01, 0.01, 9_999) == 0.01
    assert step_size(0.01, 0.01, 10_000) == 0.01 / 1.01
    assert step_size(0.01, 0.01, 25_000) == 0.01 / 1.02


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(eta=0.0), dict(tau=0), dict(budget=0.0), dict(metric="x")):
        with pytest.raises(ValueError):
            LearnerConfig(**bad)


# -- oracles -----------------------------------------------------------------------

def test_td0_absorbing_state():
    tab = TabularMdp([[]], [[]], [[]])
    assert td0_state_value(tab, episodes=20) == [0.0]


def test_td0_two_state_chain():
    tab = TabularMdp([[1], [1]], [[1.0], [0.0]], [[1.0], [1.0]])
    v = td0_state_value(tab, [0, 0], episodes=200, horizon=2, gamma=0.0, eta=0.1, start=0)
    assert abs(v[0] - 1.0) <= 0.05
    assert v[1] == 0.0


def test_td0_tracks_exact_policy_values():
    tab = TabularMdp.from_model(ring_model(4, seed=2))
    _, _, policy = brute_force_q(tab, 0.9)
    exact = policy_values(tab, policy, 0.9)
    est = td0_state_value(tab, policy, episodes=4000, horizon=60, gamma=0.9, eta=0.02, seed=1)
    assert np.allclose(est, exact, rtol=0.1)


def test_brute_force_geometric_series():
    tab = TabularMdp([[0]], [[1.0]], [[1.0]])
    q, v, policy = brute_force_q(tab, 0.9)
    assert q[0][0] == pytest.approx(10.0, abs=1e-8)
    assert policy == [0]


def test_brute_force_myopic():
    tab = TabularMdp.from_model(ring_model(5, seed=1))
    q, _, _ = brute_force_q(tab, 0.0)
    for s, row in enumerate(q):
        assert row == [r * g for r, g in zip(tab.reward[s], tab.gate[s])]


@pytest.mark.parametrize("seed", range(4))
def test_brute_force_matches_policy_enumeration(seed):
    tab = TabularMdp.from_model(ring_model(5, seed=seed))
    q, v, policy = brute_force_q(tab, 0.9)
    q_ref, v_ref = policy_enumeration_q(tab.successors, tab.reward, tab.gate, 0.9)
    assert np.allclose(v, v_ref, atol=1e-8)
    for row, ref in zip(q, q_ref):
        assert np.allclose(row, ref, atol=1e-8)
    assert np.allclose(policy_values(tab, policy, 0.9), v_ref, atol=1e-8)


def test_brute_force_state_guard():
    tab = TabularMdp([[0]] * 13, [[1.0]] * 13, [[1.0]] * 13)
    with pytest.raises(ValueError):
        brute_force_q(tab, 0.9)


# -- paths and checks ------------------------------------------------------------

def test_zero_budget_path():
    m = ring_model(5)
    q = TabularMdp.from_model(m).blank_q()
    r = generate_path(q, 2, 0.0, m)
    assert r.zones == (2,) and r.profit == 0.0


def test_blank_q_prefers_smallest_ids():
    m = ring_model(5)
    q = TabularMdp.from_model(m).blank_q()
    r = generate_path(q, 0, 60.0, m)
    # 0 -> {1, 2, 4}: pick 1; 1 -> {0, 2} minus reversal: 2; 2 -> {0, 1, 3} minus 1: 0
    assert r.zones[:4] == (0, 1, 2, 0)


def test_forced_chain():
    m = ring_model(5)
    q = TabularMdp.from_model(m).blank_q()
    for s, row in enumerate(m.neighbors):
        for k, a in enumerate(row):
            if a == (s - 1) % 5:
                q[s][k] = 1.0
    r = generate_path(q, 0, 200.0, m)
    assert list(r.zones[:6]) == [0, 4, 3, 2, 1, 0]


def _route(profit):
    return f"route-{profit}"


def test_self_check_improvement():
    st0 = SelfCheckState(8, failures=3, best_profit=100.0)
    st1, restart = self_check(st0, _route(105), [[1.0]], 105.0)
    assert not restart and st1.failures == 0 and st1.best_profit == 105.0
    assert st1.best_route == "route-105" and st1.best_q == [[1.0]]


def test_self_check_failure_increments():
    st1, restart = self_check(SelfCheckState(8, failures=2, best_profit=100.0), _route(90), [[0.0]], 90.0)
    assert (st1.failures, restart, st1.restarts) == (3, False, 0)


def test_self_check_restart_keeps_best():
    st0 = SelfCheckState(8, failures=8, restarts=1, best_route="r*", best_q=[[2.0]], best_profit=100.0)
    st1, restart = self_check(st0, _route(100), [[0.0]], 100.0)
    assert restart and st1.failures == 0 and st1.restarts == 2
    assert st1.best_route == "r*" and st1.best_profit == 100.0


def test_self_check_never_restarts_with_infinite_count():
    state = SelfCheckState(math.inf, best_profit=1.0)
    for _ in range(1000):
        state, restart = self_check(state, None, [[0.0]], 0.5)
        assert not restart
    assert state.restarts == 0


# -- full runs -----------------------------------------------------------------------

def test_zero_iterations_gives_blank_route():
    m = ring_model(5)
    cfg = LearnerConfig(iterations=0)
    blank = generate_path(TabularMdp.from_model(m).blank_q(), 0, cfg.budget, m)
    for res in (run_atdsc(m, 0, cfg), run_td_plain(m, 0, cfg)):
        assert res.route.zones == blank.zones
        assert res.log == []


def test_run_deterministic():
    m = ring_model(5, seed=4)
    cfg = LearnerConfig(iterations=20_000, tau=500, seed=3)
    a, b = run_atdsc(m, 1, cfg, failure_count=2), run_atdsc(m, 1, cfg, failure_count=2)
    assert a.route == b.route and a.q == b.q and a.log == b.log
    fa, fb = io.StringIO(), io.StringIO()
    write_run_log(a.log, fa)
    write_run_log(b.log, fb)
    assert fa.getvalue() == fb.getvalue()
    assert fa.getvalue().splitlines()[0] == ",".join(RUN_LOG_HEADER)
    assert len(fa.getvalue().splitlines()) == 41


def test_invalid_start():
    with pytest.raises(ValueError):
        run_atdsc(ring_model(5), 5, LearnerConfig(iterations=10))


def test_trajectory_matches_reference():
    m = ring_model(5, seed=6)
    tab = TabularMdp.from_model(m)
    cfg = LearnerConfig(iterations=25_000, seed=8)
    trace = []
    res = run_td_plain(m, 2, cfg, trace=trace)
    ref, ref_q = td_reference(tab.successors, tab.reward, tab.gate, 0.9, 0.01, 0.01, 25_000, 8, 2)
    assert trace == ref
    assert res.q == ref_q


def test_disabled_checks_equal_plain_td():
    m = ring_model(6, seed=2)
    cfg = LearnerConfig(iterations=15_000, tau=None, seed=5)
    ta, tb = [], []
    a = run_atdsc(m, 0, cfg, failure_count=math.inf, trace=ta)
    b = run_td_plain(m, 0, cfg, trace=tb)
    assert ta == tb and a.q == b.q and a.restarts == 0


def test_infinite_failure_count_matches_plain_td_with_checks_on():
    m = ring_model(6, seed=2)
    cfg = LearnerConfig(iterations=15_000, tau=250, seed=5)
    ta, tb = [], []
    a = run_atdsc(m, 0, cfg, failure_count=math.inf, trace=ta)
    run_td_plain(m, 0, cfg, trace=tb)
    assert ta == tb and a.restarts == 0


@pytest.mark.parametrize("seed", range(3))
def test_preserved_profit_nondecreasing(seed):
    m = ring_model(5, seed=seed)
    res = run_atdsc(m, 0, LearnerConfig(iterations=30_000, tau=300, seed=seed), failure_count=2)
    kept = [r.preserved_profit for r in res.log]
    assert kept == sorted(kept)
    assert res.profit == kept[-1]
    assert res.restarts == sum(1 for a, b in zip(res.log, res.log[1:]) if b.restarts > a.restarts)
    assert all(0 <= r.failures <= r.failure_count for r in res.log)
    assert admissible_route(res.route, m)


@pytest.mark.parametrize("seed", range(3))
def test_converges_to_exhaustive_optimum(oracle_model, seed):
    best = best_route_exhaustive(oracle_model, 0, 60.0)
    res = run_atdsc(oracle_model, 0, LearnerConfig(iterations=50_000, seed=seed))
    assert eval_route(res.route.zones, 60.0, oracle_model) >= 0.95 * best.profit


def test_converged_route_is_exhaustive_best(oracle_model):
    best = best_route_exhaustive(oracle_model, 0, 60.0)
    q = run_td_plain(oracle_model, 0, LearnerConfig(iterations=300_000)).q
    assert generate_path(q, 0, 60.0, oracle_model).zones == best.zones


@pytest.mark.parametrize("make", ["ring", "oracle"])
def test_plain_td_reproduces_oracle_policy(make, oracle_model):
    m = ring_model(4, seed=1) if make == "ring" else oracle_model
    tab = TabularMdp.from_model(m)
    _, _, policy = brute_force_q(tab, 0.9)
    res = run_td_plain(m, 0, LearnerConfig(iterations=300_000, seed=0))
    learned = [max(range(len(row)), key=row.__getitem__) for row in res.q]
    assert learned == policy


def test_zone_q_keys():
    m = ring_model(4)
    q = TabularMdp.from_model(m).blank_q()
    assert set(zone_q(q, m)) == {(m.zones[s], m.zones[a]) for s, r in enumerate(m.neighbors) for a in r}


def test_q_values_bounded():
    m = ring_model(6, seed=9)
    tab = TabularMdp.from_model(m)
    res = run_td_plain(m, 0, LearnerConfig(iterations=50_000, eta=0.2, eta_decay=0.0))
    bound = tab.max_reward() / (1 - 0.9)
    assert all(abs(v) <= 2 * bound for row in res.q for v in row)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 1000), st.integers(1, 100))
def test_restart_probability_exceeds_single_try(m, k):
    assert 1 - (1 - 1 / m) ** (k + 1) > 1 / m
