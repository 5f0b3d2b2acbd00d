"""Constraint-informed parameter groupings: the cloned policy's input features.

Per-step channel order (fixed, part of the feature schema)::

    0 b11            heat-pump temperature rise per on-step
    1 e11 * t_inf    outdoor-temperature drive on the air node
    2 e21 * t_inf    outdoor-temperature drive on the mass node
    3 e12 * g        solar drive on the air node
    4 e22 * g        solar drive on the mass node
    5 comfort        position of the current air temperature in the step band
    6 price          normalized energy price scaled by gamma
    7 away           1.0 where the step has no comfort band

The flat layout is ``building(4) | steps(N x 8, step-major) | history(3)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .milp.model import ComfortSchedule, CycleConstraint, MpcInstance, Tariff
from .thermal import StateSpace

FEATURE_SCHEMA = "bcmpc.cipg/1"
N_STATIC = 4
N_CHANNELS = 8
N_HISTORY = 3
CHANNELS = ("b11", "e11_tinf", "e21_tinf", "e12_g", "e22_g", "comfort", "price", "away")
AWAY_SENTINEL = 0.5


@dataclass(frozen=True)
class FeatureVector:
    pi1: np.ndarray  # (4,)
    steps: np.ndarray  # (N, 8)
    pi6: np.ndarray  # (3,) most recent control first

    @property
    def horizon(self) -> int:
        return self.steps.shape[0]

    @property
    def pi2(self):
        return self.steps[:, 0]

    @property
    def pi3(self):
        return self.steps[:, 1:5]

    @property
    def pi4(self):
        return self.steps[:, 5]

    @property
    def pi5(self):
        return self.steps[:, 6]

    @property
    def away(self):
        return self.steps[:, 7]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.pi1, self.steps.ravel(), self.pi6])

    @classmethod
    def from_flat(cls, v, horizon: int) -> "FeatureVector":
        v = np.asarray(v, dtype=float)
        if len(v) != flat_length(horizon):
            raise ValueError(f"flat feature length {len(v)} does not match horizon {horizon}")
        return cls(v[:N_STATIC].copy(),
                   v[N_STATIC:N_STATIC + N_CHANNELS * horizon].reshape(horizon, N_CHANNELS).copy(),
                   v[-N_HISTORY:].copy())


def flat_length(horizon: int) -> int:
    return N_STATIC + N_CHANNELS * horizon + N_HISTORY


def column_names(horizon: int) -> list[str]:
    names = ["pi1_a11", "pi1_a12", "pi1_a21", "pi1_a22"]
    for j in range(horizon):
        names += [f"s{j:03d}_{c}" for c in CHANNELS]
    names += ["pi6_u1", "pi6_u2", "pi6_u3"]
    return names


def group_building(ss: StateSpace) -> np.ndarray:
    return ss.pi1.copy()


def group_hp(b11) -> np.ndarray:
    return np.asarray(b11, dtype=float).copy()


def group_weather(ss: StateSpace, disturbances) -> np.ndarray:
    w = np.asarray(disturbances, dtype=float).reshape(-1, 2)
    e = ss.e
    return np.column_stack([e[0, 0] * w[:, 0], e[1, 0] * w[:, 0], e[0, 1] * w[:, 1], e[1, 1] * w[:, 1]])


def group_comfort(t_a_now: float, comfort: ComfortSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Band position of the current temperature for each step and the away flag.

    0 at the lower bound, 1 at the upper bound; away steps carry the 0.5
    sentinel with the flag set.
    """
    away = comfort.away
    td = comfort.t_delta
    if np.any(td[~away] == 0):
        raise ValueError("zero-width comfort band")
    safe = np.where(away, 1.0, td)
    pos = (t_a_now - (comfort.t_set - safe)) / (2.0 * safe)
    pos = np.where(away, AWAY_SENTINEL, pos)
    return pos, away.astype(float)


def group_price(tariff: Tariff, gamma: float) -> np.ndarray:
    span = tariff.pi_max - tariff.pi_min
    if span <= 0:
        return np.full(len(tariff.price), 0.5 * gamma)
    return gamma * (tariff.price - tariff.pi_min) / span


def group_history(last_controls) -> np.ndarray:
    h = np.asarray(last_controls, dtype=float)
    if h.shape != (N_HISTORY,) or np.any((h != 0) & (h != 1)):
        raise ValueError("history grouping needs the last three binary controls")
    return h.copy()


def assemble(t_a_now: float, instance: MpcInstance) -> FeatureVector:
    """Feature vector for the decision at the start of ``instance``'s horizon."""
    if instance.gamma <= 0:
        raise ValueError("instance lacks the heat-pump power gamma")
    pos, away = group_comfort(t_a_now, instance.comfort)
    steps = np.column_stack([
        group_hp(instance.b11),
        group_weather(instance.ss, instance.disturbances),
        pos,
        group_price(instance.tariff, instance.gamma),
        away,
    ])
    return FeatureVector(group_building(instance.ss), steps, group_history(instance.cycle.last(N_HISTORY)))


# ---- ungrouped representation for the ablation ------------------------------

RAW_STATIC = ("r_a_inf", "r_am", "r_m_inf", "c_a", "c_m", "alpha_a", "alpha_m",
              "beta1", "beta2", "gamma", "t_a")
RAW_CHANNELS = ("t_inf", "g", "t_set", "t_delta", "price", "away")
RAW_SCHEMA = "bcmpc.raw/1"


def raw_flat_length(horizon: int) -> int:
    return len(RAW_STATIC) + len(RAW_CHANNELS) * horizon + N_HISTORY


def raw_column_names(horizon: int) -> list[str]:
    names = [f"raw_{s}" for s in RAW_STATIC]
    for j in range(horizon):
        names += [f"raw{j:03d}_{c}" for c in RAW_CHANNELS]
    names += ["raw_u1", "raw_u2", "raw_u3"]
    return names


def raw_features(t_a_now, building, hp, instance: MpcInstance) -> np.ndarray:
    """The same information as the groupings, left as physical variables.

    Away steps report a zero band half-width plus the away flag.
    """
    static = np.array([*building.to_dict().values(), hp.beta1, hp.beta2, hp.gamma, t_a_now])
    c = instance.comfort
    steps = np.column_stack([
        instance.disturbances[:, 0],
        instance.disturbances[:, 1],
        c.t_set,
        np.where(c.away, 0.0, c.t_delta),
        instance.tariff.price,
        c.away.astype(float),
    ])
    return np.concatenate([static, steps.ravel(), np.asarray(instance.cycle.last(N_HISTORY), float)])
