"""Cloned policy: network + frozen input scaling + lockout overlay, with JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..milp.model import CycleConstraint
from .network import N_HIST, FfnnNet, GruNet, sigmoid

AGENT_SCHEMA = "bcmpc.agent/1"


class SchemaError(ValueError):
    """Model or dataset file does not match the expected schema."""


@dataclass
class FeatureScaler:
    """Per-feature affine map; entries outside the mask keep mean 0, scale 1."""

    static_mean: np.ndarray
    static_std: np.ndarray
    step_mean: np.ndarray
    step_std: np.ndarray

    @classmethod
    def identity(cls, n_static, n_channels):
        return cls(np.zeros(n_static), np.ones(n_static), np.zeros(n_channels), np.ones(n_channels))

    @classmethod
    def fit(cls, static, steps, static_mask, channel_mask):
        static_mask = np.asarray(static_mask, bool)
        channel_mask = np.asarray(channel_mask, bool)
        s = cls.identity(static.shape[1], steps.shape[2])
        flat = steps.reshape(-1, steps.shape[2])
        for arr_mean, arr_std, data, mask in ((s.static_mean, s.static_std, static, static_mask),
                                              (s.step_mean, s.step_std, flat, channel_mask)):
            mu = data.mean(0)
            sd = data.std(0)
            sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
            arr_mean[mask] = mu[mask]
            arr_std[mask] = sd[mask]
        return s

    def apply(self, static, steps):
        return (static - self.static_mean) / self.static_std, (steps - self.step_mean) / self.step_std

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("static_mean", "static_std", "step_mean", "step_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=float) for k in ("static_mean", "static_std", "step_mean", "step_std")))


def split_rows(x, n_static: int, n_channels: int):
    """Flat feature rows ``static | steps | hist`` -> the three network inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = (x.shape[1] - n_static - N_HIST) // n_channels
    if n < 1 or n_static + n * n_channels + N_HIST != x.shape[1]:
        raise SchemaError(f"row width {x.shape[1]} does not fit {n_static} static + k*{n_channels} + {N_HIST}")
    return x[:, :n_static], x[:, n_static:n_static + n * n_channels].reshape(len(x), n, n_channels), x[:, -N_HIST:]


@dataclass
class Decision:
    u: int  # applied
    u_raw: int  # thresholded network output before the overlay
    prob: float


class Agent:
    def __init__(self, net, scaler: FeatureScaler, features: str):
        self.net = net
        self.scaler = scaler
        self.features = features

    @property
    def kind(self):
        return self.net.kind

    def prob(self, rows) -> np.ndarray:
        static, steps, hist = split_rows(rows, self.net.n_static, self.net.n_channels)
        static, steps = self.scaler.apply(static, steps)
        return sigmoid(self.net.logits(static, steps, hist))

    def n_params(self) -> int:
        return sum(v.size for v in self.net.params.values())

    def to_dict(self) -> dict:
        net = self.net
        arch = {"n_static": net.n_static, "n_channels": net.n_channels}
        if isinstance(net, GruNet):
            arch.update(hidden=net.hidden, dense=net.dense)
        else:
            arch.update(horizon=net.horizon)
        return {
            "schema": AGENT_SCHEMA,
            "kind": net.kind,
            "features": self.features,
            "arch": arch,
            "scaler": self.scaler.to_dict(),
            "params": {k: {"shape": list(net.params[k].shape), "data": net.params[k].ravel().tolist()}
                       for k in net.ORDER},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Agent":
        if d.get("schema") != AGENT_SCHEMA:
            raise SchemaError(f"model schema {d.get('schema')!r}, expected {AGENT_SCHEMA!r}")
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
        for k, v in params.items():
            if not np.all(np.isfinite(v)):
                raise SchemaError(f"non-finite weights in {k}")
        a = d["arch"]
        if d["kind"] == GruNet.kind:
            net = GruNet(params, a["n_static"], a["n_channels"])
        elif d["kind"] == FfnnNet.kind:
            net = FfnnNet(params, a["n_static"], a["n_channels"], a["horizon"])
        else:
            raise SchemaError(f"unknown model kind {d['kind']!r}")
        return cls(net, FeatureScaler.from_dict(d["scaler"]), d["features"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def save(agent: Agent, path) -> int:
    """Write the model file; returns its size in bytes."""
    data = agent.dumps().encode()
    Path(path).write_bytes(data)
    return len(data)


def load(path, features: str | None = None) -> Agent:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a model file ({exc})") from None
    agent = Agent.from_dict(d)
    if features is not None and agent.features != features:
        raise SchemaError(f"model expects features {agent.features!r}, got {features!r}")
    return agent


def predict_control(agent: Agent, row, cycle: CycleConstraint) -> Decision:
    """Threshold at 0.5 (exactly 0.5 means off), then enforce any dwell lockout."""
    p = float(agent.prob(row)[0])
    raw = int(p > 0.5)
    forced = cycle.forced()
    return Decision(raw if forced is None else forced, raw, p)
