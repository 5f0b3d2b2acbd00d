import dataclasses

import numpy as np
import pytest

from bcmpc.milp import (ComfortSchedule, CycleConstraint, MpcInstance, NodeLimitExceeded, PenaltyWeights, Tariff,
                        brute_force, build_instance, dwell_feasible, dwell_violations, first_control, mpc_policy,
                        relaxation, solve_bnb, solve_lp)
from bcmpc.milp.bnb import price_segments
from bcmpc.milp.generate import random_instance, valid_histories
from bcmpc.thermal import NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, ThermalState, discretize

SS = discretize(NOMINAL_BUILDING)


def make(n, t_a=20.5, t_set=21.0, t_delta=0.5, price=0.2, t_inf=0.0, g=0.0, hist=(0, 0, 0), pen=(1.0, 1.0)):
    w = np.column_stack([np.full(n, t_inf), np.full(n, g)])
    price = np.broadcast_to(np.asarray(price, float), (n,)).copy()
    tariff = Tariff(price, float(price.min()), float(price.max()) + 0.1)
    return build_instance(NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, SS, ThermalState(t_a, t_a), w,
                          ComfortSchedule(np.full(n, t_set), np.full(n, t_delta)), tariff, PenaltyWeights(*pen),
                          CycleConstraint(3, 3, hist), n)


def scaled(inst: MpcInstance, c: float) -> MpcInstance:
    p = inst.penalties
    return dataclasses.replace(inst, tariff=inst.tariff.scaled(c), penalties=PenaltyWeights(c * p.under, c * p.over))


@pytest.mark.parametrize("method", ["highs", "simplex"])
def test_bnb_matches_enumeration(method):
    rng = np.random.default_rng(2024)
    for _ in range(60):
        inst = random_instance(rng, int(rng.integers(1, 11)))
        ref = brute_force(inst)
        got = solve_bnb(inst, lp_method=method)
        assert got.objective == pytest.approx(ref.objective, abs=1e-6)
        np.testing.assert_array_equal(got.u, ref.u)
        assert got.objective == pytest.approx(got.cost_energy + got.cost_comfort, abs=1e-12)
        assert np.all(got.v_up * got.v_down == 0)
        assert np.all(got.t_pen_under >= 0) and np.all(got.t_pen_over >= 0)


def test_first_control_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(80):
        inst = random_instance(rng, int(rng.integers(2, 11)))
        assert first_control(inst).u0 == brute_force(inst).u[0]


def test_first_control_simplex_backend():
    rng = np.random.default_rng(8)
    for _ in range(20):
        inst = random_instance(rng, 8)
        assert first_control(inst, lp_method="simplex").u0 == brute_force(inst).u[0]


def test_lp_bound_below_integer_optimum():
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_instance(rng, 6)
        for m in ("simplex", "highs"):
            lp = solve_lp(relaxation(inst), m)
            assert lp.status == "optimal"
            assert lp.objective >= -1e-9
            assert lp.objective <= brute_force(inst).objective + 1e-7


def test_all_away_gives_all_off():
    inst = make(8, t_delta=np.inf, t_a=5.0, t_inf=-10.0)
    sol = solve_bnb(inst)
    np.testing.assert_array_equal(sol.u, 0)
    assert sol.objective == 0
    lp = solve_lp(relaxation(inst), "simplex")
    assert lp.objective == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(lp.x[:8], 0, atol=1e-9)


def test_zero_price_inside_band_prefers_off():
    inst = make(6, t_a=21.0, price=0.0, t_inf=21.0, t_delta=1.0)
    sol = solve_bnb(inst)
    np.testing.assert_array_equal(sol.u, 0)
    assert sol.objective == 0


def test_one_step_two_branch_comparison():
    for pen in (0.01, 0.05, 1.0, 10.0):
        inst = make(1, t_a=18.0, t_delta=0.5, t_set=21.0, price=0.3, pen=(pen, pen))
        x_off = inst.free_response()[0, 0]
        x_on = x_off + inst.b11[0]
        lower = 20.5
        j_off = pen * max(0.0, lower - x_off)
        j_on = 0.3 * inst.step_energy + pen * max(0.0, lower - x_on)
        assert solve_bnb(inst).u[0] == int(j_on < j_off)


def test_brute_force_small_cases():
    locked = make(1, t_a=30.0, hist=(0, 0, 1))  # just switched on: must stay on
    np.testing.assert_array_equal(brute_force(locked).u, [1])
    away = make(3, t_delta=np.inf, price=0.0)
    sol = brute_force(away)
    np.testing.assert_array_equal(sol.u, [0, 0, 0])
    assert sol.objective == 0
    with pytest.raises(ValueError):
        brute_force(make(15))


def test_invalid_instances():
    with pytest.raises(ValueError):
        make(0)
    with pytest.raises(ValueError):
        build_instance(NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, SS, ThermalState(20, 20), np.zeros((3, 2)),
                       ComfortSchedule(np.full(5, 21.0), np.full(5, 0.5)), Tariff.from_prices(np.full(5, 0.1)),
                       PenaltyWeights(), CycleConstraint(), 5)
    with pytest.raises(ValueError):
        CycleConstraint(3, 3, (1, 0, 1))  # contradictory: forced both ways
    with pytest.raises(ValueError):
        PenaltyWeights(0.0, 1.0)
    with pytest.raises(ValueError):
        Tariff(np.array([0.1, 0.5]), 0.1, 0.3)


def test_doubling_costs_doubles_objective():
    rng = np.random.default_rng(11)
    for _ in range(10):
        inst = random_instance(rng, 10)
        a, b = solve_bnb(inst), solve_bnb(scaled(inst, 2.0))
        np.testing.assert_array_equal(a.u, b.u)
        assert b.objective == pytest.approx(2 * a.objective, rel=1e-12)


def test_solutions_respect_dwell_times():
    rng = np.random.default_rng(5)
    for _ in range(40):
        inst = random_instance(rng, int(rng.integers(3, 13)))
        u = solve_bnb(inst).u
        assert dwell_feasible(u, inst.cycle)
        if len(set(inst.cycle.history)) == 1:
            assert dwell_violations(list(inst.cycle.history) + u.tolist(), 3, 3) == 0


def test_monotone_comfort_in_penalty():
    rng = np.random.default_rng(9)
    for _ in range(25):
        inst = random_instance(rng, 8)
        w = inst.penalties.under
        base = dataclasses.replace(inst, penalties=PenaltyWeights(w, w))
        v1 = brute_force(base)
        v2 = brute_force(dataclasses.replace(inst, penalties=PenaltyWeights(3 * w, 3 * w)))
        assert v2.t_pen_under.sum() + v2.t_pen_over.sum() <= v1.t_pen_under.sum() + v1.t_pen_over.sum() + 1e-9


def test_instance_json_round_trip():
    rng = np.random.default_rng(1)
    inst = random_instance(rng, 9)
    inst = dataclasses.replace(inst, comfort=ComfortSchedule(inst.comfort.t_set,
                                                             np.r_[inst.comfort.t_delta[:-2], np.inf, np.inf]))
    back = MpcInstance.loads(inst.dumps())
    assert back.dumps() == inst.dumps()
    np.testing.assert_array_equal(solve_bnb(back).u, solve_bnb(inst).u)
    with pytest.raises(ValueError):
        MpcInstance.from_dict({**inst.to_dict(), "schema": "other/9"})


def test_node_limit_reported():
    rng = np.random.default_rng(4)
    hard = None
    for _ in range(50):
        inst = random_instance(rng, 12)
        if solve_bnb(inst).nodes > 3:
            hard = inst
            break
    assert hard is not None
    with pytest.raises(NodeLimitExceeded):
        solve_bnb(hard, node_limit=2)


def test_price_segments():
    seg = price_segments(np.array([0.1, 0.1, 0.3, 0.3, 0.3, 0.1]))
    np.testing.assert_array_equal(seg, [[1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 1, 0], [0, 0, 0, 0, 0, 1]])


def test_valid_histories_are_consistent():
    hs = valid_histories()
    assert (0, 0, 0, 0) in hs and (1, 1, 1, 1) in hs
    assert (0, 0, 1, 0) not in hs  # would force both on and off
    assert (0, 1, 0, 0) in hs  # an old short run no longer binds


def test_mpc_policy_examples():
    w = np.column_stack([np.full(8, 10.0), np.zeros(8)])
    comfort = ComfortSchedule(np.full(8, 21.0), np.full(8, 1.0))
    flat_high = Tariff(np.full(8, 0.4), 0.1, 0.4)
    args = (NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
    mid = mpc_policy(*args, ThermalState(21.0, 21.0), w, comfort, flat_high, PenaltyWeights(), CycleConstraint(),
                     horizon=8)
    assert mid == 0
    cold = ThermalState(17.0, 17.0)
    assert mpc_policy(*args, cold, w, comfort, flat_high, PenaltyWeights(50, 50), CycleConstraint(), horizon=8) == 1
    locked_off = CycleConstraint(3, 3, (1, 1, 1, 0))
    assert mpc_policy(*args, cold, w, comfort, flat_high, PenaltyWeights(50, 50), locked_off, horizon=8) == 0
    again = mpc_policy(*args, cold, w, comfort, flat_high, PenaltyWeights(50, 50), CycleConstraint(), horizon=8)
    assert again == 1
