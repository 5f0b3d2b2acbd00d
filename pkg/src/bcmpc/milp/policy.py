"""Receding-horizon MPC control law."""
from __future__ import annotations

from ..thermal import BuildingModel, HeatPumpModel, ThermalState, discretize, DT_DEFAULT
from .bnb import FirstControl, first_control
from .model import (ComfortSchedule, CycleConstraint, MpcInstance, PenaltyWeights, Tariff,
                    build_instance, DEFAULT_HORIZON)


def mpc_decision(instance: MpcInstance, lp_method: str = "highs") -> FirstControl:
    return first_control(instance, lp_method=lp_method)


def mpc_policy(
    building: BuildingModel,
    hp: HeatPumpModel,
    state: ThermalState,
    forecasts,
    comfort: ComfortSchedule,
    tariff: Tariff,
    penalties: PenaltyWeights,
    cycle: CycleConstraint,
    horizon: int = DEFAULT_HORIZON,
    dt: float = DT_DEFAULT,
    lp_method: str = "highs",
) -> int:
    """u*[0] of the MPC problem posed at ``state``; callers re-invoke every step."""
    ss = discretize(building, dt)
    inst = build_instance(building, hp, ss, state, forecasts, comfort, tariff, penalties, cycle, horizon)
    return mpc_decision(inst, lp_method).u0
