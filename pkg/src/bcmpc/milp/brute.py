"""Enumeration oracle for small MPC instances."""
from __future__ import annotations

import itertools

import numpy as np

from .bnb import tie_tolerance
from .model import MpcInstance, MpcSolution, SolverError

MAX_BRUTE_HORIZON = 14


def _all_sequences(n: int) -> np.ndarray:
    # rows in lexicographic order, all-zero first
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=int)


def _switch_indicators(seqs: np.ndarray, history) -> tuple[np.ndarray, np.ndarray, int]:
    """v_up / v_down over history and horizon; returns offset of step 0."""
    hist = np.broadcast_to(np.asarray(history, dtype=int), (len(seqs), len(history)))
    full = np.hstack([hist, seqs])
    d = np.diff(full, axis=1)
    # column t of d is the switch entering full position t+1
    vu = np.hstack([np.zeros((len(seqs), 1), int), (d > 0).astype(int)])
    vd = np.hstack([np.zeros((len(seqs), 1), int), (d < 0).astype(int)])
    return vu, vd, len(history)


def brute_force(instance: MpcInstance) -> MpcSolution:
    """Enumerate every control sequence, keep those meeting the dwell rows,
    simulate the prediction model step by step and pick the cheapest
    (lexicographically smallest on ties)."""
    n = instance.horizon
    if n > MAX_BRUTE_HORIZON:
        raise ValueError(f"brute force limited to N <= {MAX_BRUTE_HORIZON}, got {n}")
    cyc = instance.cycle
    seqs = _all_sequences(n)
    vu, vd, off = _switch_indicators(seqs, cyc.history)

    feasible = np.ones(len(seqs), dtype=bool)
    for j in range(n):
        p = off + j
        on_sum = vu[:, p - cyc.min_on + 1: p + 1].sum(axis=1)
        off_sum = vd[:, p - cyc.min_off + 1: p + 1].sum(axis=1)
        feasible &= on_sum <= seqs[:, j]
        feasible &= off_sum <= 1 - seqs[:, j]
    seqs = seqs[feasible]
    vu = vu[feasible][:, off:]
    vd = vd[feasible][:, off:]
    if len(seqs) == 0:
        raise SolverError("no dwell-feasible sequence")

    a, e = instance.ss.a, instance.ss.e
    ta = np.full(len(seqs), instance.state0.t_a)
    tm = np.full(len(seqs), instance.state0.t_m)
    under = np.zeros((len(seqs), n))
    over = np.zeros((len(seqs), n))
    comfort = instance.comfort
    for j in range(n):
        w = instance.disturbances[j]
        ta_next = a[0, 0] * ta + a[0, 1] * tm + instance.b11[j] * seqs[:, j] + e[0] @ w
        tm = a[1, 0] * ta + a[1, 1] * tm + e[1] @ w
        ta = ta_next
        if not comfort.away[j]:
            under[:, j] = np.maximum(comfort.t_set[j] - comfort.t_delta[j] - ta, 0.0)
            over[:, j] = np.maximum(ta - comfort.t_set[j] - comfort.t_delta[j], 0.0)

    energy = seqs @ (instance.tariff.price * instance.step_energy)
    pen = instance.penalties
    comfort_cost = pen.under * under.sum(axis=1) + pen.over * over.sum(axis=1)
    total = energy + comfort_cost
    best = total.min()
    k = int(np.flatnonzero(total <= best + tie_tolerance(best))[0])
    return MpcSolution(
        u=seqs[k].copy(),
        v_up=vu[k].copy(),
        v_down=vd[k].copy(),
        t_pen_under=under[k].copy(),
        t_pen_over=over[k].copy(),
        objective=float(total[k]),
        cost_energy=float(energy[k]),
        cost_comfort=float(comfort_cost[k]),
        status="optimal",
        nodes=len(seqs),
    )
