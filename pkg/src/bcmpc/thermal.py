"""Two-state RC building model, linear heat-pump model and their Euler discretization.

Units throughout: degC, kW, kWh, hours.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

DT_DEFAULT = 1.0 / 12.0  # five-minute step, hours
SANITY_RANGE = (-50.0, 60.0)


class DivergenceError(RuntimeError):
    """Plant state left the physically sane temperature range."""


@dataclass(frozen=True)
class BuildingModel:
    r_a_inf: float  # air <-> outdoor, degC/kW
    r_am: float  # air <-> mass
    r_m_inf: float  # mass <-> outdoor
    c_a: float  # kWh/degC
    c_m: float
    alpha_a: float  # m^2
    alpha_m: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"BuildingModel.{f.name} must be positive, got {v}")

    def scaled(self, factors: dict[str, float]) -> "BuildingModel":
        vals = {f.name: getattr(self, f.name) * factors.get(f.name, 1.0) for f in fields(self)}
        return BuildingModel(**vals)

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class HeatPumpModel:
    beta1: float  # kW/degC, slope in (t_inf - t_a)
    beta2: float  # kW
    gamma: float  # electrical draw when on, kW

    def __post_init__(self):
        if not (self.beta2 > 0 and self.gamma > 0):
            raise ValueError("HeatPumpModel needs beta2 > 0 and gamma > 0")
        if abs(self.beta1) * 40.0 >= 10.0 * self.beta2:
            raise ValueError("|beta1| too large: heat output may turn negative in the operating envelope")

    def heat_output(self, t_inf: float, t_a: float) -> float:
        """Thermal output when on, kW."""
        return self.beta1 * (t_inf - t_a) + self.beta2

    def to_dict(self) -> dict:
        return {"beta1": float(self.beta1), "beta2": float(self.beta2), "gamma": float(self.gamma)}


NOMINAL_BUILDING = BuildingModel(
    r_a_inf=5.0, r_am=1.0, r_m_inf=10.0, c_a=2.0, c_m=10.0, alpha_a=0.02, alpha_m=0.05
)
NOMINAL_HEAT_PUMP = HeatPumpModel(beta1=0.05, beta2=12.0, gamma=3.0)


@dataclass(frozen=True)
class ThermalState:
    t_a: float
    t_m: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t_a, self.t_m])


@dataclass(frozen=True)
class Disturbance:
    t_inf: float
    g: float  # global irradiation, kW/m^2

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("solar irradiation must be non-negative")


@dataclass(frozen=True)
class StateSpace:
    """x' = a x + b11 u e1 + e w, with w = (t_inf, g)."""

    a: np.ndarray
    e: np.ndarray
    dt: float

    @property
    def pi1(self) -> np.ndarray:
        return np.array([self.a[0, 0], self.a[0, 1], self.a[1, 0], self.a[1, 1]])


def discretize(model: BuildingModel, dt: float = DT_DEFAULT) -> StateSpace:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a11 = 1.0 - dt / model.c_a * (1.0 / model.r_a_inf + 1.0 / model.r_am)
    a22 = 1.0 - dt / model.c_m * (1.0 / model.r_m_inf + 1.0 / model.r_am)
    if a11 <= 0 or a22 <= 0:
        raise ValueError(f"dt={dt} makes the explicit discretization unstable (a11={a11:.4g}, a22={a22:.4g})")
    a = np.array([
        [a11, dt / (model.c_a * model.r_am)],
        [dt / (model.c_m * model.r_am), a22],
    ])
    e = np.array([
        [dt / (model.r_a_inf * model.c_a), model.alpha_a * dt / model.c_a],
        [dt / (model.r_m_inf * model.c_m), model.alpha_m * dt / model.c_m],
    ])
    return StateSpace(a=a, e=e, dt=dt)


def hp_input(hp: HeatPumpModel, building: BuildingModel, t_ref, t_inf, dt: float = DT_DEFAULT):
    """Per-step air-temperature rise from one step of heat-pump operation (b11).

    ``t_ref`` is the setpoint when building MPC matrices and the true air
    temperature when stepping the plant. Accepts scalars or arrays.
    """
    return dt / building.c_a * (hp.beta1 * (np.asarray(t_inf) - np.asarray(t_ref)) + hp.beta2)


def power(hp: HeatPumpModel, u) -> float:
    return hp.gamma * u


def plant_step(
    state: ThermalState,
    u: int,
    d: Disturbance,
    building: BuildingModel,
    hp: HeatPumpModel,
    dt: float = DT_DEFAULT,
) -> ThermalState:
    """Explicit Euler step of the continuous RC model.

    Heat-pump output uses the actual air temperature, unlike the MPC matrices
    which linearize around the setpoint.
    """
    if u not in (0, 1):
        raise ValueError(f"control must be binary, got {u}")
    t_a, t_m = state.t_a, state.t_m
    q_hp = u * hp.heat_output(d.t_inf, t_a)
    dta = ((d.t_inf - t_a) / building.r_a_inf + (t_m - t_a) / building.r_am
           + building.alpha_a * d.g + q_hp) / building.c_a
    dtm = ((d.t_inf - t_m) / building.r_m_inf + (t_a - t_m) / building.r_am
           + building.alpha_m * d.g) / building.c_m
    nxt = ThermalState(t_a + dt * dta, t_m + dt * dtm)
    lo, hi = SANITY_RANGE
    if not (lo <= nxt.t_a <= hi and lo <= nxt.t_m <= hi):
        raise DivergenceError(f"plant diverged: t_a={nxt.t_a:.3f}, t_m={nxt.t_m:.3f}")
    return nxt
