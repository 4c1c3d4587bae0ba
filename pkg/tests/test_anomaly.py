import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atdsc.anomaly import (
    MlpModel,
    anomaly_features,
    anomaly_gate,
    classify,
    failure_count,
    load_model,
    loss_and_grad,
    make_anomaly_dataset,
    mlp_forward,
    mlp_train,
    rule_label,
    save_model,
)

from oracles import central_differences, mlp_loss, round_half_up


def test_rule_label_majority():
    prior = np.full(10, 100.0)
    cur = np.array([50.0] * 6 + [100.0] * 4)
    assert rule_label(cur, prior) == 1
    cur = np.array([50.0] * 5 + [100.0] * 5)
    assert rule_label(cur, prior) == 0


def test_rule_label_uniform_pandemic():
    prior = np.arange(10, 20, dtype=float)
    assert rule_label(prior * 0.1, prior) == 1
    assert anomaly_gate(prior * 0.1, prior) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 500), st.integers(1, 500)), min_size=2, max_size=12),
       st.sampled_from([0.5, 2.0, 3.0, 10.0]))
def test_rule_label_scale_invariant(pairs, k):
    cur = np.array([p[0] for p in pairs], dtype=float)
    pri = np.array([p[1] for p in pairs], dtype=float)
    assert rule_label(cur, pri) == rule_label(cur * k, pri * k)


def test_failure_count_examples():
    assert failure_count(0, 3, 10) == 8
    assert failure_count(1, 1, 8) == 4
    assert failure_count(1, 10, 10) == 8
    assert failure_count(1, 0, 10) == 1
    with pytest.raises(ValueError):
        failure_count(1, 5, 10, c=0)


@pytest.mark.parametrize("m", [2, 5, 10, 17, 50])
def test_failure_count_matches_oracle_and_is_monotone(m):
    values = [failure_count(1, n, m) for n in range(m + 1)]
    assert values == [max(1, round_half_up(8 * (n / m) ** (1 / 3))) for n in range(m + 1)]
    assert values == sorted(values)
    assert all(1 <= v <= 8 for v in values)


def test_zero_network_outputs_half():
    model = MlpModel.zeros(6, hidden=4)
    assert mlp_forward(np.ones(6), model) == 0.5
    assert classify(np.ones(6), model) == 1


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mlp_forward(np.ones(5), MlpModel.zeros(6))
    with pytest.raises(ValueError):
        anomaly_features([1, 2], [1, 2, 3])


def test_features_in_unit_interval():
    f = anomaly_features([10, 20, 5], [40, 30, 20])
    assert f.shape == (6,)
    assert f.min() >= 0 and f.max() == 1.0


def test_forward_deterministic_and_bounded():
    model = MlpModel.init(8, 16, seed=3)
    x = np.random.default_rng(0).uniform(0, 1, (200, 8))
    out = mlp_forward(x, model)
    assert np.all((out > 0) & (out < 1))
    assert np.array_equal(out, mlp_forward(x, model))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    n_in, hidden = 4, 5
    x = rng.uniform(0, 1, (12, n_in))
    y = (rng.uniform(size=12) < 0.5).astype(float)
    base = MlpModel.zeros(n_in, hidden)
    worst = 0.0
    for _ in range(100):
        theta = rng.normal(0, 0.8, base.params().size)
        model = base.with_params(theta)
        loss, g = loss_and_grad(model, x, y)
        assert loss == pytest.approx(mlp_loss(theta, x, y, n_in, hidden), rel=1e-10)
        ref = central_differences(lambda t: mlp_loss(t, x, y, n_in, hidden), theta)
        worst = max(worst, np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-12))
    assert worst < 1e-4


def test_separable_toy():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (400, 2))
    x = x[np.abs(x[:, 0] + x[:, 1]) > 0.1]
    y = (x[:, 0] + x[:, 1] > 0).astype(float)
    _, rep = mlp_train(x, y, hidden=8, lr=0.01, epochs=200, batch_size=32, seed=1)
    assert rep.train_accuracy >= 0.99


def test_training_deterministic():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(120, 4))
    y = (x[:, 0] > 0.5).astype(float)
    a, _ = mlp_train(x, y, hidden=6, epochs=5, seed=9)
    b, _ = mlp_train(x, y, hidden=6, epochs=5, seed=9)
    assert np.array_equal(a.params(), b.params())


def test_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        mlp_train(np.zeros((10, 2)), np.ones(10))


def test_save_load_round_trip(tmp_path):
    model = MlpModel.init(6, 7, seed=2)
    save_model(model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    assert np.array_equal(back.params(), model.params())
    assert back.layer_sizes == (6, 7, 1)
    save_model(back, tmp_path / "n.txt")
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "n.txt").read_bytes()


def test_bad_model_file(tmp_path):
    (tmp_path / "x.txt").write_text("something 3\n")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.txt")


def test_dataset_labels_follow_rule():
    x, y, curs, pris = make_anomaly_dataset(np.arange(5, 15, dtype=float), 300, seed=4)
    assert x.shape == (300, 20)
    assert 0 < y.mean() < 1
    assert all(rule_label(c, p) == lab for c, p, lab in zip(curs, pris, y))


def test_small_trained_gate_agrees_with_rule():
    prior = np.arange(20, 30, dtype=float)
    x, y, curs, pris = make_anomaly_dataset(prior, 1500, seed=0)
    model, rep = mlp_train(x, y, lr=0.003, epochs=40, batch_size=64, seed=0)
    assert rep.val_accuracy >= 0.85
    assert anomaly_gate(prior * 0.1, prior, model) == 1
