"""Receding-horizon MPC problem data and exact evaluation of a control sequence.

Index convention used everywhere in the package: for horizon step ``j`` the
control ``u[j]`` is applied over ``[k+j, k+j+1)``, its price is ``price[j]``,
and the comfort band ``lower[j]..upper[j]`` applies to the air temperature of
the *resulting* state ``x[j+1]``. The current temperature is not controllable
and is not scored inside the MPC.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..thermal import BuildingModel, HeatPumpModel, StateSpace, ThermalState, hp_input

DEFAULT_HORIZON = 72
DEFAULT_MIN_CYCLE = 3
INSTANCE_SCHEMA = "bcmpc.mpc-instance/1"


@dataclass(frozen=True)
class ComfortSchedule:
    t_set: np.ndarray
    t_delta: np.ndarray  # +inf marks an "away" step with no comfort rows

    def __post_init__(self):
        object.__setattr__(self, "t_set", np.asarray(self.t_set, dtype=float))
        object.__setattr__(self, "t_delta", np.asarray(self.t_delta, dtype=float))
        if self.t_set.shape != self.t_delta.shape:
            raise ValueError("t_set and t_delta lengths differ")
        if np.any(self.t_delta < 0) or np.any(np.isnan(self.t_delta)):
            raise ValueError("t_delta must be >= 0")

    def __len__(self):
        return len(self.t_set)

    @property
    def away(self) -> np.ndarray:
        return np.isinf(self.t_delta)

    @property
    def lower(self) -> np.ndarray:
        return self.t_set - self.t_delta

    @property
    def upper(self) -> np.ndarray:
        return self.t_set + self.t_delta

    def window(self, start: int, n: int) -> "ComfortSchedule":
        return ComfortSchedule(self.t_set[start:start + n], self.t_delta[start:start + n])


@dataclass(frozen=True)
class Tariff:
    price: np.ndarray  # $/kWh per step
    pi_min: float
    pi_max: float

    def __post_init__(self):
        object.__setattr__(self, "price", np.asarray(self.price, dtype=float))
        if self.pi_max < self.pi_min:
            raise ValueError("pi_max < pi_min")
        tol = 1e-12 * max(1.0, abs(self.pi_max))
        if len(self.price) and (self.price.min() < self.pi_min - tol or self.price.max() > self.pi_max + tol):
            raise ValueError("price outside [pi_min, pi_max]")

    @classmethod
    def from_prices(cls, price) -> "Tariff":
        price = np.asarray(price, dtype=float)
        return cls(price, float(price.min()), float(price.max()))

    def window(self, start: int, n: int) -> "Tariff":
        return Tariff(self.price[start:start + n], self.pi_min, self.pi_max)

    def scaled(self, a: float, b: float = 0.0) -> "Tariff":
        return Tariff(a * self.price + b, a * self.pi_min + b, a * self.pi_max + b)


@dataclass(frozen=True)
class PenaltyWeights:
    under: float = 1.0  # $ per degC-step below the band
    over: float = 1.0

    def __post_init__(self):
        if not (self.under > 0 and self.over > 0):
            raise ValueError("penalty weights must be positive")


def dwell_violations(seq: Sequence[int], min_on: int, min_off: int) -> int:
    """Count completed runs that are shorter than allowed (the first and last run may be truncated)."""
    seq = list(seq)
    bad = 0
    start = 0
    for i in range(1, len(seq) + 1):
        if i == len(seq) or seq[i] != seq[start]:
            if start > 0 and i < len(seq):
                if (i - start) < (min_on if seq[start] else min_off):
                    bad += 1
            start = i
    return bad


@dataclass(frozen=True)
class CycleConstraint:
    """Minimum on/off dwell times plus the recently implemented controls.

    ``history`` is ordered oldest to newest; ``history[-1]`` is the control
    applied in the step that just finished.
    """

    min_on: int = DEFAULT_MIN_CYCLE
    min_off: int = DEFAULT_MIN_CYCLE
    history: tuple = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(int(h) for h in self.history))
        if self.min_on < 1 or self.min_off < 1:
            raise ValueError("dwell times must be >= 1")
        if len(self.history) < max(self.min_on, self.min_off):
            raise ValueError("history shorter than the longest dwell time")
        if any(h not in (0, 1) for h in self.history):
            raise ValueError("history must be binary")
        if self.forced_on and self.forced_off:
            raise ValueError(f"contradictory history {self.history}: forces both on and off")

    def _recent_switch(self, up: bool, window: int) -> bool:
        h = self.history
        n = len(h)
        # switch at history index t (between h[t-1] and h[t]) still binds step 0
        # when it lies within the last window-1 history positions
        for t in range(max(1, n - window + 1), n):
            if up and h[t] == 1 and h[t - 1] == 0:
                return True
            if not up and h[t] == 0 and h[t - 1] == 1:
                return True
        return False

    @property
    def forced_on(self) -> bool:
        return self._recent_switch(True, self.min_on)

    @property
    def forced_off(self) -> bool:
        return self._recent_switch(False, self.min_off)

    def forced(self) -> int | None:
        """The control the dwell constraints impose on the next step, if any."""
        if self.forced_on:
            return 1
        if self.forced_off:
            return 0
        return None

    def push(self, u: int) -> "CycleConstraint":
        hist = (self.history + (int(u),))[-len(self.history):]
        return CycleConstraint(self.min_on, self.min_off, hist)

    def last(self, n: int = 3) -> tuple:
        """Most recent first: (u[k-1], u[k-2], ...)."""
        return tuple(reversed(self.history[-n:]))


@dataclass(frozen=True)
class MpcInstance:
    horizon: int
    state0: ThermalState
    ss: StateSpace
    b11: np.ndarray
    disturbances: np.ndarray  # (N, 2): t_inf, g
    comfort: ComfortSchedule
    tariff: Tariff
    penalties: PenaltyWeights
    cycle: CycleConstraint
    step_energy: float  # kWh per on-step (gamma * dt)
    gamma: float = field(default=0.0)

    def __post_init__(self):
        n = self.horizon
        if n < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "b11", np.asarray(self.b11, dtype=float))
        object.__setattr__(self, "disturbances", np.asarray(self.disturbances, dtype=float).reshape(-1, 2))
        for name, arr in (("b11", self.b11), ("disturbances", self.disturbances),
                          ("comfort", self.comfort), ("tariff.price", self.tariff.price)):
            if len(arr) != n:
                raise ValueError(f"{name} has length {len(arr)}, horizon is {n}")
        if self.step_energy <= 0:
            raise ValueError("step_energy must be positive")

    # ---- helpers shared by the solvers -------------------------------------
    def energy_cost(self) -> np.ndarray:
        """$ incurred by running the heat pump in each step."""
        return self.tariff.price * self.step_energy

    def free_response(self) -> np.ndarray:
        """States x[1..N] with the heat pump off, shape (N, 2)."""
        a, e = self.ss.a, self.ss.e
        x = self.state0.as_array()
        out = np.empty((self.horizon, 2))
        for j in range(self.horizon):
            x = a @ x + e @ self.disturbances[j]
            out[j] = x
        return out

    def response_matrix(self) -> np.ndarray:
        """G[j, i]: air-temperature change of x[j+1] per unit u[i]."""
        n = self.horizon
        a = self.ss.a
        # impulse response of air temperature to a unit air-temperature kick
        imp = np.empty(n)
        v = np.array([1.0, 0.0])
        for t in range(n):
            imp[t] = v[0]
            v = a @ v
        g = np.zeros((n, n))
        for i in range(n):
            g[i:, i] = imp[: n - i] * self.b11[i]
        return g

    # ---- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        def enc(x):
            return [None if np.isinf(v) else float(v) for v in np.asarray(x).ravel()]

        return {
            "schema": INSTANCE_SCHEMA,
            "horizon": self.horizon,
            "state0": [self.state0.t_a, self.state0.t_m],
            "a": self.ss.a.tolist(),
            "e": self.ss.e.tolist(),
            "dt": self.ss.dt,
            "b11": self.b11.tolist(),
            "t_inf": self.disturbances[:, 0].tolist(),
            "g": self.disturbances[:, 1].tolist(),
            "t_set": self.comfort.t_set.tolist(),
            "t_delta": enc(self.comfort.t_delta),  # null = away
            "price": self.tariff.price.tolist(),
            "pi_min": self.tariff.pi_min,
            "pi_max": self.tariff.pi_max,
            "penalty_under": self.penalties.under,
            "penalty_over": self.penalties.over,
            "min_on": self.cycle.min_on,
            "min_off": self.cycle.min_off,
            "history": list(self.cycle.history),
            "step_energy": self.step_energy,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MpcInstance":
        if d.get("schema") != INSTANCE_SCHEMA:
            raise ValueError(f"unsupported instance schema {d.get('schema')!r}")
        t_delta = np.array([np.inf if v is None else v for v in d["t_delta"]], dtype=float)
        return cls(
            horizon=int(d["horizon"]),
            state0=ThermalState(*d["state0"]),
            ss=StateSpace(np.array(d["a"], dtype=float), np.array(d["e"], dtype=float), float(d["dt"])),
            b11=np.array(d["b11"]),
            disturbances=np.column_stack([d["t_inf"], d["g"]]),
            comfort=ComfortSchedule(np.array(d["t_set"]), t_delta),
            tariff=Tariff(np.array(d["price"]), d["pi_min"], d["pi_max"]),
            penalties=PenaltyWeights(d["penalty_under"], d["penalty_over"]),
            cycle=CycleConstraint(d["min_on"], d["min_off"], tuple(d["history"])),
            step_energy=float(d["step_energy"]),
            gamma=float(d.get("gamma", 0.0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "MpcInstance":
        return cls.from_dict(json.loads(s))


@dataclass
class MpcSolution:
    u: np.ndarray
    v_up: np.ndarray
    v_down: np.ndarray
    t_pen_under: np.ndarray
    t_pen_over: np.ndarray
    objective: float
    cost_energy: float
    cost_comfort: float
    status: str = "optimal"
    nodes: int = 0


class SolverError(RuntimeError):
    pass


class NodeLimitExceeded(SolverError):
    pass


def build_instance(
    building: BuildingModel,
    hp: HeatPumpModel,
    ss: StateSpace,
    state0: ThermalState,
    forecasts,
    comfort: ComfortSchedule,
    tariff: Tariff,
    penalties: PenaltyWeights,
    cycle: CycleConstraint,
    horizon: int = DEFAULT_HORIZON,
) -> MpcInstance:
    """Assemble one MPC problem from plant parameters and forecasts.

    ``forecasts`` is an (>=N, 2) array of (t_inf, g); ``comfort`` and
    ``tariff`` must cover at least N steps and are truncated to N. The heat
    pump column is linearized at the step setpoint.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    forecasts = np.asarray(forecasts, dtype=float).reshape(-1, 2)
    if len(forecasts) < horizon or len(comfort) < horizon or len(tariff.price) < horizon:
        raise ValueError(
            f"forecast lengths ({len(forecasts)}, {len(comfort)}, {len(tariff.price)}) shorter than horizon {horizon}"
        )
    w = forecasts[:horizon]
    comfort = comfort.window(0, horizon)
    tariff = tariff.window(0, horizon)
    b11 = hp_input(hp, building, comfort.t_set, w[:, 0], ss.dt)
    return MpcInstance(
        horizon=horizon,
        state0=state0,
        ss=ss,
        b11=np.asarray(b11, dtype=float),
        disturbances=w,
        comfort=comfort,
        tariff=tariff,
        penalties=penalties,
        cycle=cycle,
        step_energy=hp.gamma * ss.dt,
        gamma=hp.gamma,
    )
