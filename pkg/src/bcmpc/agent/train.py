"""Mini-batch Adam training of the policy networks on labeled feature rows."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Agent, FeatureScaler, split_rows
from .network import FfnnNet, GruNet, bce_with_logits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    epochs: int = 24
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 0  # 0 disables early stopping
    seed: int = 0
    kind: str = "rt-gru"
    hidden: int = 26
    dense: int = 25
    ffnn_hidden: tuple = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "ffnn_hidden", tuple(self.ffnn_hidden))
        if min(self.batch_size, self.epochs, self.hidden, self.dense) < 1 or self.lr <= 0:
            raise ValueError("training sizes and learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")
        if self.kind not in (GruNet.kind, FfnnNet.kind):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def to_dict(self):
        d = asdict(self)
        d["ffnn_hidden"] = list(self.ffnn_hidden)
        return d


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainMetrics:
    loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    positive_fraction: float = float("nan")
    val_majority: float = float("nan")
    n_train: int = 0
    n_val: int = 0
    epochs_run: int = 0

    def to_dict(self):
        return asdict(self)


def _accuracy(net, data) -> float:
    static, steps, hist, y = data
    return float(np.mean((net.logits(static, steps, hist) > 0) == (y > 0.5)))


def train(
    rows,
    labels,
    config: TrainConfig,
    n_static: int,
    n_channels: int,
    features: str,
    scaler: FeatureScaler,
    val_rows=None,
    val_labels=None,
) -> tuple[Agent, TrainMetrics]:
    """Fit a fresh network; inputs are flat feature rows in a fixed order."""
    y = np.asarray(labels, dtype=float)
    if len(y) == 0 or np.all(y == y[0]):
        raise ValueError("training data must contain both classes")
    static, steps, hist = split_rows(rows, n_static, n_channels)
    static, steps = scaler.apply(static, steps)
    rng = np.random.default_rng(config.seed)
    if config.kind == GruNet.kind:
        net = GruNet.init(rng, n_static, n_channels, config.hidden, config.dense)
    else:
        net = FfnnNet.init(rng, n_static, n_channels, steps.shape[1], config.ffnn_hidden)
    opt = Adam(net.params, config.lr, config.beta1, config.beta2, config.eps)

    val = None
    if val_rows is not None and len(val_labels):
        vs, vx, vh = split_rows(val_rows, n_static, n_channels)
        vs, vx = scaler.apply(vs, vx)
        val = (vs, vx, vh, np.asarray(val_labels, dtype=float))
    m = TrainMetrics(positive_fraction=float(y.mean()), n_train=len(y), n_val=0 if val is None else len(val[3]))
    if val is not None:
        pos = val[3].mean()
        m.val_majority = float(max(pos, 1 - pos))

    best = (np.inf, None)
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for s in range(0, len(y), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, g = net.loss_and_grad(static[idx], steps[idx], hist[idx], y[idx])
            opt.step(net.params, g)
            total += loss * len(idx)
        m.loss.append(total / len(y))
        m.train_accuracy.append(_accuracy(net, (static, steps, hist, y)))
        m.epochs_run = epoch + 1
        if val is not None:
            m.val_accuracy.append(_accuracy(net, val))
            if config.patience:
                vloss = bce_with_logits(net.logits(*val[:3]), val[3])
                if vloss < best[0]:
                    best, stale = (vloss, {k: v.copy() for k, v in net.params.items()}), 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        break
        log.debug("epoch %d loss %.4f", epoch, m.loss[-1])
    if best[1] is not None:
        net.params.update(best[1])
        if val is not None:
            m.val_accuracy.append(_accuracy(net, val))
    return Agent(net, scaler, features), m


# representation name -> (feature schema, static width, channel width, static mask, channel mask)
def representation(name: str):
    from .. import cipg
    if name == "cipg":
        return (cipg.FEATURE_SCHEMA, cipg.N_STATIC, cipg.N_CHANNELS,
                [True] * cipg.N_STATIC, [True] * 5 + [False] * 3)
    if name == "raw":
        nc = len(cipg.RAW_CHANNELS)
        return (cipg.RAW_SCHEMA, len(cipg.RAW_STATIC), nc, [True] * len(cipg.RAW_STATIC), [True] * (nc - 1) + [False])
    raise ValueError(f"unknown representation {name!r}")


def fit_scaler(rows, name: str) -> FeatureScaler:
    """Grouped inputs: standardize only the building, heat-pump and weather groups.
    Raw inputs: standardize every variable except the away flag."""
    _, ns, nc, smask, cmask = representation(name)
    static, steps, _ = split_rows(rows, ns, nc)
    return FeatureScaler.fit(static, steps, smask, cmask)


def train_representation(rows, labels, name: str, config: TrainConfig, scaler=None,
                         val_rows=None, val_labels=None):
    schema, ns, nc, _, _ = representation(name)
    if scaler is None:
        scaler = fit_scaler(rows, name)
    return train(rows, labels, config, ns, nc, schema, scaler, val_rows, val_labels)
