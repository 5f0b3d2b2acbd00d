"""Report figures rendered to PNG with the non-interactive backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"baseline": "#8c8c8c", "bc": "#1f77b4", "mpc": "#d62728"}


def _save(fig, path, config_hash: str):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "bcmpc", "Description": f"config_hash={config_hash}"})
    plt.close(fig)


def ablation_bars(rows: list[dict], path, config_hash: str = ""):
    """Objective and comfort violation per training variant."""
    names = [r["variant"] for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, key, label in ((axes[0], "objective", "objective J ($)"),
                           (axes[1], "comfort_violation", "comfort violation (degC-steps)")):
        ax.bar(x, [r[key] for r in rows], color=["#1f77b4", "#ff7f0e", "#2ca02c"][:len(rows)])
        ax.set_xticks(x, names, rotation=12, fontsize=8)
        ax.set_ylabel(label)
    _save(fig, path, config_hash)


def improvement_bars(per_building: list[dict], policy: str, path, config_hash: str = ""):
    """Percent objective improvement over the baseline, one bar per building."""
    vals = [r[f"improvement_pct_{policy}"] for r in per_building]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(vals) + 2), 3.4))
    x = np.arange(len(vals))
    ax.bar(x, vals, color=COLORS.get(policy, "#1f77b4"))
    ax.set_xticks(x, [str(r["building"]) for r in per_building])
    ax.axhline(0, color="k", lw=0.8)
    ax.set_xlabel("building")
    ax.set_ylabel(f"{policy} improvement over baseline (%)")
    _save(fig, path, config_hash)


def trajectory_panel(trajs: dict, path, config_hash: str = "", start: int = 0, steps: int | None = None):
    """Indoor temperature against the band for each policy, plus controls and price."""
    first = next(iter(trajs.values()))
    end = first.steps if steps is None else min(first.steps, start + steps)
    hours = np.arange(start, end) * first.dt
    occ = ~np.isinf(first.t_delta[start:end])
    lo = np.where(occ, first.t_set[start:end] - first.t_delta[start:end], np.nan)
    hi = np.where(occ, first.t_set[start:end] + first.t_delta[start:end], np.nan)
    fig, (a1, a2, a3) = plt.subplots(3, 1, figsize=(9, 6.5), sharex=True, gridspec_kw={"height_ratios": [3, 1.4, 1]})
    a1.fill_between(hours, lo, hi, color="#cfe8cf", step="post", label="comfort band")
    for name, t in trajs.items():
        a1.plot(hours, t.t_a[start + 1:end + 1], color=COLORS.get(name), lw=1.1, label=name)
    a1.plot(hours, first.t_inf[start:end], color="#9467bd", lw=0.8, ls=":", label="outdoor")
    a1.set_ylabel("temperature (degC)")
    a1.legend(fontsize=7, ncol=5, loc="lower left")
    for i, (name, t) in enumerate(trajs.items()):
        a2.step(hours, t.u[start:end] * 0.8 + 1.0 * i, where="post", color=COLORS.get(name), lw=0.9)
    a2.set_yticks([1.0 * i + 0.4 for i in range(len(trajs))], list(trajs))
    a2.set_ylabel("heat pump")
    a3.step(hours, first.price[start:end], where="post", color="k", lw=0.9)
    a3.set_ylabel("$/kWh")
    a3.set_xlabel("hours")
    _save(fig, path, config_hash)


def learning_curve(history: list[dict], path, config_hash: str = ""):
    it = [h["iteration"] for h in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.plot(it, [h["J_appr"] for h in history], "o-", label="agent")
    ax.axhline(history[0]["J_MPC"], color=COLORS["mpc"], ls="--", label="MPC")
    ax.set_xlabel("iteration")
    ax.set_ylabel("evaluation objective ($)")
    ax.legend()
    _save(fig, path, config_hash)
