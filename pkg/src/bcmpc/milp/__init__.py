"""Mixed-integer MPC: problem data, exact solvers and the control law."""
from .bnb import FirstControl, dwell_feasible, first_control, solve_bnb, switches, tie_tolerance
from .brute import MAX_BRUTE_HORIZON, brute_force
from .lp import LinearProgram, LpFailure, relaxation, solve_lp
from .model import (
    DEFAULT_HORIZON,
    ComfortSchedule,
    CycleConstraint,
    MpcInstance,
    MpcSolution,
    NodeLimitExceeded,
    PenaltyWeights,
    SolverError,
    Tariff,
    build_instance,
    dwell_violations,
)
from .policy import mpc_decision, mpc_policy
