"""Anomaly gate and adaptive failure count.

A small ReLU network ``[2M, H, 1]`` is trained to reproduce the majority
rule "more than half the zones have fewer than 80% of last year's pickups".
Its decision switches the restart tolerance of the learner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_MAGIC = "atdsc-mlp"
MODEL_VERSION = 1


def anomaly_features(current, prior) -> np.ndarray:
    """Concatenate both count vectors scaled by their joint maximum.

    A shared scale keeps the current/prior ratio visible to the network;
    scaling each vector on its own would erase a city-wide drop.
    """
    cur = np.asarray(current, dtype=float)
    pri = np.asarray(prior, dtype=float)
    if cur.shape != pri.shape or cur.ndim != 1:
        raise ValueError("current and prior must be vectors of equal length")
    scale = max(cur.max(initial=0.0), pri.max(initial=0.0))
    if scale <= 0:
        scale = 1.0
    return np.concatenate([cur / scale, pri / scale])


def rule_label(current, prior, threshold: float = 0.8) -> int:
    cur = np.asarray(current, dtype=float)
    pri = np.asarray(prior, dtype=float)
    abnormal = int(np.sum(cur < threshold * pri))
    return int(abnormal > cur.size / 2)


def failure_count(i_o: int, n_normal: int, m: int, c: int = 8) -> int:
    """Restart tolerance: ``c`` normally, ``c * (N_normal / M)^(1/3)`` when the gate fires.

    Fractions round half up with a floor of 1.
    """
    if c < 1:
        raise ValueError("c must be at least 1")
    if not i_o:
        return c
    value = c * float(np.cbrt(n_normal / m))
    return max(1, int(math.floor(value + 0.5)))


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------

def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


@dataclass
class MlpModel:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float
    hyper: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, n_in: int, hidden: int = 32) -> "MlpModel":
        return cls(np.zeros((hidden, n_in)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @classmethod
    def init(cls, n_in: int, hidden: int = 32, seed: int = 0) -> "MlpModel":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, math.sqrt(2.0 / n_in), size=(hidden, n_in)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, math.sqrt(1.0 / hidden), size=hidden),
            b2=0.0,
        )

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return (self.w1.shape[1], self.w1.shape[0], 1)

    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_params(self, flat: np.ndarray) -> "MlpModel":
        h, d = self.w1.shape
        i = 0
        w1 = flat[i:i + h * d].reshape(h, d); i += h * d
        b1 = flat[i:i + h]; i += h
        w2 = flat[i:i + h]; i += h
        return MlpModel(w1.copy(), b1.copy(), w2.copy(), float(flat[i]), dict(self.hyper))


def _logits(model: MlpModel, x: np.ndarray):
    z1 = x @ model.w1.T + model.b1
    a1 = np.maximum(z1, 0.0)
    return z1, a1, a1 @ model.w2 + model.b2


def mlp_forward(features, model: MlpModel) -> np.ndarray | float:
    """Output probability for one feature vector (float) or a batch (array)."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != model.w1.shape[1]:
        raise ValueError(f"expected {model.w1.shape[1]} features, got {x2.shape[1]}")
    out = _sigmoid(_logits(model, x2)[2])
    return float(out[0]) if single else out


def classify(features, model: MlpModel) -> int | np.ndarray:
    p = mlp_forward(features, model)
    return int(p >= 0.5) if np.ndim(p) == 0 else (p >= 0.5).astype(int)


def loss_and_grad(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``model.params()``."""
    n = x.shape[0]
    z1, a1, z2 = _logits(model, x)
    # log(1 + exp(z)) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z2) - y * z2))
    dz2 = (_sigmoid(z2) - y) / n
    dw2 = a1.T @ dz2
    db2 = dz2.sum()
    dz1 = np.outer(dz2, model.w2) * (z1 > 0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return loss, np.concatenate([dw1.ravel(), db1, dw2, [db2]])


def numeric_grad(model: MlpModel, x: np.ndarray, y: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the loss, one parameter at a time."""
    theta = model.params()
    g = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (loss_and_grad(model.with_params(up), x, y)[0]
                - loss_and_grad(model.with_params(dn), x, y)[0]) / (2 * eps)
    return g


@dataclass
class TrainReport:
    train_accuracy: float
    val_accuracy: float
    losses: list[float]


def mlp_train(x, y, hidden: int = 32, lr: float = 0.01, epochs: int = 200, batch_size: int = 32,
              seed: int = 0, val_fraction: float = 0.2) -> tuple[MlpModel, TrainReport]:
    """Mini-batch training with Adam steps on binary cross-entropy."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes (0 and 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_val = int(round(val_fraction * len(y)))
    val_idx, tr_idx = order[:n_val], order[n_val:]

    model = MlpModel.init(x.shape[1], hidden, seed=int(rng.integers(2**31)))
    model.hyper = {"hidden": hidden, "lr": lr, "epochs": epochs, "batch_size": batch_size, "seed": seed}
    theta = model.params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, step = 0.9, 0.999, 0
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(tr_idx)
        epoch_loss = 0.0
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            loss, g = loss_and_grad(model.with_params(theta), x[idx], y[idx])
            epoch_loss += loss * len(idx)
            step += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + 1e-8)
        losses.append(epoch_loss / max(1, len(perm)))
    model = model.with_params(theta)

    def acc(idx):
        if len(idx) == 0:
            return float("nan")
        return float(np.mean(classify(x[idx], model) == y[idx]))

    return model, TrainReport(acc(tr_idx), acc(val_idx), losses)


# --------------------------------------------------------------------------
# Training data
# --------------------------------------------------------------------------

def make_anomaly_dataset(prior, n_samples: int, seed: int = 0, threshold: float = 0.8):
    """Perturbed (current, prior) pairs labelled by :func:`rule_label`.

    Each sample jitters the prior counts per zone, marks a uniformly random
    number of zones as hit (scaled by 0.02-0.65) and the rest as normal
    (0.9-1.3). Returns ``(X, y, currents, priors)``.
    """
    base = np.asarray(prior, dtype=float)
    m = base.size
    rng = np.random.default_rng(seed)
    xs, ys, curs, pris = [], [], [], []
    for _ in range(n_samples):
        pri = base * rng.uniform(0.85, 1.15, size=m)
        k = int(rng.integers(0, m + 1))
        hit = np.zeros(m, dtype=bool)
        hit[rng.choice(m, size=k, replace=False)] = True
        scale = np.where(hit, rng.uniform(0.02, 0.65, size=m), rng.uniform(0.9, 1.3, size=m))
        cur = pri * scale
        xs.append(anomaly_features(cur, pri))
        ys.append(rule_label(cur, pri, threshold))
        curs.append(cur)
        pris.append(pri)
    return np.array(xs), np.array(ys), np.array(curs), np.array(pris)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def save_model(model: MlpModel, path: str | Path) -> None:
    """Text format: magic+version, layer sizes, then row-major W1, b1, W2, b2."""
    d, h, _ = model.layer_sizes
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"layers {d} {h} 1"]
    lines.append("w1 " + " ".join(repr(float(v)) for v in model.w1.ravel()))
    lines.append("b1 " + " ".join(repr(float(v)) for v in model.b1))
    lines.append("w2 " + " ".join(repr(float(v)) for v in model.w2))
    lines.append("b2 " + repr(float(model.b2)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> MlpModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    magic, version = lines[0].split()
    if magic != MODEL_MAGIC or int(version) != MODEL_VERSION:
        raise ValueError(f"{path}: not a version-{MODEL_VERSION} model file")
    _, d, h, _ = lines[1].split()
    d, h = int(d), int(h)
    rows = {ln.split(" ", 1)[0]: ln.split()[1:] for ln in lines[2:]}
    w1 = np.array([float(v) for v in rows["w1"]]).reshape(h, d)
    return MlpModel(
        w1=w1,
        b1=np.array([float(v) for v in rows["b1"]]),
        w2=np.array([float(v) for v in rows["w2"]]),
        b2=float(rows["b2"][0]),
    )


def anomaly_gate(current, prior, model: MlpModel | None = None, threshold: float = 0.8) -> int:
    """``I_o``: the network decision, or the labelling rule when no model is given."""
    if model is None:
        return rule_label(current, prior, threshold)
    return int(classify(anomaly_features(current, prior), model))
