"""Reverse-time GRU policy network and a flat feed-forward baseline, in numpy.

Both networks map standardized inputs ``(static (B,S), steps (B,N,C),
hist (B,3))`` to a logit per sample. ``loss_and_grad`` returns the mean
binary cross-entropy and exact gradients for every parameter.
"""
from __future__ import annotations

import numpy as np

N_HIST = 3


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _uniform(rng, shape, fan_in):
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def bce_with_logits(logit, y) -> float:
    # softplus(l) - y*l, stable for large |l|
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


class GruNet:
    """GRU over the horizon in reversed time, then [h, relu(history), static] -> dense -> sigmoid.

    Gates: z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
    c = tanh(Wh x + Uh (r*h) + bh), h' = (1-z) h + z c.
    """

    kind = "rt-gru"
    ORDER = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "wc", "bc", "Wd", "bd", "wo", "bo")

    def __init__(self, params: dict, n_static: int, n_channels: int):
        self.params = params
        self.n_static = n_static
        self.n_channels = n_channels
        self.hidden = params["Uz"].shape[0]
        self.dense = params["Wd"].shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_static=4, n_channels=8, hidden=26, dense=25, zero=False):
        h, c, s = hidden, n_channels, n_static
        p = {}
        for g in "zrh":
            p[f"W{g}"] = _uniform(rng, (h, c), h)
            p[f"U{g}"] = _uniform(rng, (h, h), h)
            p[f"b{g}"] = _uniform(rng, (h,), h)
        p["wc"] = _uniform(rng, (N_HIST,), N_HIST)
        p["bc"] = _uniform(rng, (1,), N_HIST)
        p["Wd"] = _uniform(rng, (dense, h + 1 + s), h + 1 + s)
        p["bd"] = _uniform(rng, (dense,), h + 1 + s)
        p["wo"] = _uniform(rng, (dense,), dense)
        p["bo"] = _uniform(rng, (1,), dense)
        if zero:
            p = {k: np.zeros_like(v) for k, v in p.items()}
        return cls(p, n_static, n_channels)

    def _forward(self, static, steps, hist, keep=False):
        p = self.params
        b, n, _ = steps.shape
        H = self.hidden
        wx = np.concatenate([p["Wz"], p["Wr"], p["Wh"]])
        bx = np.concatenate([p["bz"], p["br"], p["bh"]])
        uzr = np.concatenate([p["Uz"], p["Ur"]])
        xp = steps @ wx.T + bx  # (B, N, 3H)
        h = np.zeros((b, H))
        tape = []
        for t in range(n - 1, -1, -1):
            zr = sigmoid(xp[:, t, :2 * H] + h @ uzr.T)
            z, r = zr[:, :H], zr[:, H:]
            rh = r * h
            c = np.tanh(xp[:, t, 2 * H:] + rh @ p["Uh"].T)
            if keep:
                tape.append((t, h, z, r, rh, c))
            h = h + z * (c - h)
        comp_pre = hist @ p["wc"] + p["bc"][0]
        comp = np.maximum(comp_pre, 0.0)
        feat = np.concatenate([h, comp[:, None], static], axis=1)
        d_pre = feat @ p["Wd"].T + p["bd"]
        d = np.maximum(d_pre, 0.0)
        logit = d @ p["wo"] + p["bo"][0]
        if keep:
            return logit, (tape, comp_pre, feat, d_pre, d)
        return logit

    def logits(self, static, steps, hist):
        return self._forward(static, steps, hist)

    def loss_and_grad(self, static, steps, hist, y, scale=1.0):
        p = self.params
        H = self.hidden
        b = len(y)
        logit, (tape, comp_pre, feat, d_pre, d) = self._forward(static, steps, hist, keep=True)
        loss = bce_with_logits(logit, y)
        dl = scale * (sigmoid(logit) - y) / b
        g = {}
        g["wo"] = d.T @ dl
        g["bo"] = np.array([dl.sum()])
        dd = np.outer(dl, p["wo"]) * (d_pre > 0)
        g["Wd"] = dd.T @ feat
        g["bd"] = dd.sum(0)
        dfeat = dd @ p["Wd"]
        dh = dfeat[:, :H]
        dcomp = dfeat[:, H] * (comp_pre > 0)
        g["wc"] = hist.T @ dcomp
        g["bc"] = np.array([dcomp.sum()])
        for k in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh"):
            g[k] = np.zeros_like(p[k])
        for t, h_prev, z, r, rh, c in reversed(tape):
            x = steps[:, t]
            dc = dh * z
            dz = dh * (c - h_prev)
            dh_prev = dh * (1.0 - z)
            dcp = dc * (1.0 - c * c)
            g["Wh"] += dcp.T @ x
            g["Uh"] += dcp.T @ rh
            g["bh"] += dcp.sum(0)
            drh = dcp @ p["Uh"]
            dh_prev += drh * r
            dzp = dz * z * (1.0 - z)
            drp = drh * h_prev * r * (1.0 - r)
            g["Wz"] += dzp.T @ x
            g["Uz"] += dzp.T @ h_prev
            g["bz"] += dzp.sum(0)
            g["Wr"] += drp.T @ x
            g["Ur"] += drp.T @ h_prev
            g["br"] += drp.sum(0)
            dh = dh_prev + dzp @ p["Uz"] + drp @ p["Ur"]
        return scale * loss, g


class FfnnNet:
    """Flattened features -> ReLU hidden layers -> sigmoid."""

    kind = "ffnn"

    def __init__(self, params: dict, n_static: int, n_channels: int, horizon: int):
        self.params = params
        self.n_static = n_static
        self.n_channels = n_channels
        self.horizon = horizon
        self.layers = sum(1 for k in params if k.startswith("W"))
        self.ORDER = tuple(f"{a}{i}" for i in range(self.layers) for a in "Wb")

    @classmethod
    def init(cls, rng, n_static=4, n_channels=8, horizon=36, hidden=(64, 32), zero=False):
        sizes = [n_static + n_channels * horizon + N_HIST, *hidden, 1]
        p = {}
        for i in range(len(sizes) - 1):
            p[f"W{i}"] = _uniform(rng, (sizes[i + 1], sizes[i]), sizes[i])
            p[f"b{i}"] = _uniform(rng, (sizes[i + 1],), sizes[i])
        if zero:
            p = {k: np.zeros_like(v) for k, v in p.items()}
        return cls(p, n_static, n_channels, horizon)

    def _flat(self, static, steps, hist):
        if steps.shape[1] != self.horizon:
            raise ValueError(f"feed-forward baseline expects horizon {self.horizon}, got {steps.shape[1]}")
        return np.concatenate([static, steps.reshape(len(steps), -1), hist], axis=1)

    def _forward(self, x, keep=False):
        acts = [x]
        pre = []
        for i in range(self.layers):
            z = acts[-1] @ self.params[f"W{i}"].T + self.params[f"b{i}"]
            pre.append(z)
            if i < self.layers - 1:
                acts.append(np.maximum(z, 0.0))
        logit = pre[-1][:, 0]
        return (logit, acts, pre) if keep else logit

    def logits(self, static, steps, hist):
        return self._forward(self._flat(static, steps, hist))

    def loss_and_grad(self, static, steps, hist, y, scale=1.0):
        logit, acts, pre = self._forward(self._flat(static, steps, hist), keep=True)
        loss = bce_with_logits(logit, y)
        delta = (scale * (sigmoid(logit) - y) / len(y))[:, None]
        g = {}
        for i in range(self.layers - 1, -1, -1):
            g[f"W{i}"] = delta.T @ acts[i]
            g[f"b{i}"] = delta.sum(0)
            if i:
                delta = (delta @ self.params[f"W{i}"]) * (pre[i - 1] > 0)
        return scale * loss, g
