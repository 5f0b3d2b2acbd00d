"""Seeded random MPC instances for regression and oracle cross-checks."""
from __future__ import annotations

import numpy as np

from ..thermal import NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, ThermalState, discretize
from .model import ComfortSchedule, CycleConstraint, PenaltyWeights, Tariff, build_instance


def valid_histories(min_on=3, min_off=3, length=4):
    out = []
    for k in range(2 ** length):
        h = tuple(int(b) for b in np.binary_repr(k, length))
        try:
            CycleConstraint(min_on, min_off, h)
        except ValueError:
            continue
        out.append(h)
    return out


def random_instance(rng: np.random.Generator, horizon: int, spread: float = 0.25):
    b = NOMINAL_BUILDING.scaled({k: rng.uniform(1 - spread, 1 + spread) for k in NOMINAL_BUILDING.to_dict()})
    hp0 = NOMINAL_HEAT_PUMP
    from ..thermal import HeatPumpModel

    hp = HeatPumpModel(hp0.beta1 * rng.uniform(1 - spread, 1 + spread),
                       hp0.beta2 * rng.uniform(1 - spread, 1 + spread),
                       hp0.gamma * rng.uniform(1 - spread, 1 + spread))
    ss = discretize(b)
    t_inf = rng.uniform(-10, 8) + rng.normal(0, 0.5, horizon)
    g = np.clip(rng.uniform(-0.2, 0.6) + rng.normal(0, 0.05, horizon), 0, None)
    t_set = np.full(horizon, rng.uniform(19, 22))
    if rng.random() < 0.5:
        cut = rng.integers(0, horizon)
        t_set[cut:] = rng.uniform(16, 22)
    modes = rng.choice([0.5, 1.0, np.inf], p=[0.6, 0.25, 0.15])
    t_delta = np.full(horizon, modes)
    if rng.random() < 0.3:
        cut = rng.integers(0, horizon)
        t_delta[cut:] = rng.choice([0.5, 1.0, np.inf])
    levels = rng.uniform(0.05, 0.4, size=3)
    price = levels[rng.integers(0, 3, horizon)] if rng.random() < 0.7 else rng.uniform(0.05, 0.4, horizon)
    tariff = Tariff(price, min(price.min(), levels.min()), max(price.max(), levels.max()))
    hist = valid_histories()[rng.integers(0, len(valid_histories()))]
    mid = float(t_set[0])
    state0 = ThermalState(mid + rng.uniform(-1.5, 1.5), mid + rng.uniform(-2.5, 1.0))
    pen = PenaltyWeights(rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0))
    return build_instance(
        b, hp, ss, state0, np.column_stack([t_inf, g]),
        ComfortSchedule(t_set, t_delta), tariff, pen, CycleConstraint(3, 3, hist), horizon,
    )
