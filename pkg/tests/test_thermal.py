import numpy as np
import pytest

from bcmpc.thermal import (NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, BuildingModel, Disturbance, DivergenceError,
                           HeatPumpModel, ThermalState, discretize, hp_input, plant_step, power)

DT = 1.0 / 12.0


def test_discretize_closed_form():
    ss = discretize(NOMINAL_BUILDING, DT)
    assert ss.a[0, 0] == pytest.approx(0.95, abs=1e-15)
    assert ss.a[0, 1] == pytest.approx(1 / 24, abs=1e-15)
    b = NOMINAL_BUILDING
    assert ss.a[1, 0] == pytest.approx(DT / (b.c_m * b.r_am))
    assert ss.a[1, 1] == pytest.approx(1 - DT / b.c_m * (1 / b.r_m_inf + 1 / b.r_am))
    assert ss.e[0, 1] == pytest.approx(b.alpha_a * DT / b.c_a)


def test_offset_rows_sum_to_one(rng):
    for _ in range(50):
        b = NOMINAL_BUILDING.scaled({k: rng.uniform(0.75, 1.25) for k in NOMINAL_BUILDING.to_dict()})
        dt = rng.uniform(0.01, 0.25)
        ss = discretize(b, dt)
        assert ss.a[0, 0] + ss.a[0, 1] + ss.e[0, 0] == pytest.approx(1.0, abs=1e-14)
        assert ss.a[1, 0] + ss.a[1, 1] + ss.e[1, 0] == pytest.approx(1.0, abs=1e-14)
        assert 0 < ss.a[0, 0] < 1 and 0 < ss.a[1, 1] < 1 and ss.a[0, 1] > 0 and ss.a[1, 0] > 0


def test_small_dt_limit():
    ss = discretize(NOMINAL_BUILDING, 1e-12)
    np.testing.assert_allclose(ss.a, np.eye(2), atol=1e-11)
    np.testing.assert_allclose(ss.e, 0, atol=1e-11)


def test_unstable_dt_rejected():
    with pytest.raises(ValueError):
        discretize(NOMINAL_BUILDING, 2.0)
    with pytest.raises(ValueError):
        discretize(NOMINAL_BUILDING, 0.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        BuildingModel(5, 1, 10, 0, 10, 0.02, 0.05)
    with pytest.raises(ValueError):
        HeatPumpModel(0.05, 0.0, 3.0)
    with pytest.raises(ValueError):
        HeatPumpModel(2.0, 6.0, 3.0)
    with pytest.raises(ValueError):
        Disturbance(0.0, -0.1)


def test_hp_input_examples():
    flat = HeatPumpModel(0.0, 6.0, 3.0)
    assert hp_input(flat, NOMINAL_BUILDING, 20.0, -5.0, DT) == pytest.approx(0.25)
    assert hp_input(flat, NOMINAL_BUILDING, 10.0, 15.0, DT) == pytest.approx(0.25)
    sloped = HeatPumpModel(0.1, 6.0, 3.0)
    assert hp_input(sloped, NOMINAL_BUILDING, 20.0, 0.0, DT) == pytest.approx(1 / 6, abs=1e-15)


def test_power():
    assert power(NOMINAL_HEAT_PUMP, 0) == 0
    assert power(HeatPumpModel(0.05, 6.0, 3.0), 1) == 3.0
    u = np.array([1, 0, 1, 1])
    assert np.sum(power(NOMINAL_HEAT_PUMP, u)) == NOMINAL_HEAT_PUMP.gamma * 3


def test_equilibrium_and_cooling():
    s = ThermalState(5.0, 5.0)
    assert plant_step(s, 0, Disturbance(5.0, 0.0), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP) == s
    nxt = plant_step(ThermalState(20.0, 20.0), 0, Disturbance(0.0, 0.0), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
    assert nxt.t_a < 20.0


def test_heating_step_by_hand():
    b, hp = NOMINAL_BUILDING, NOMINAL_HEAT_PUMP
    nxt = plant_step(ThermalState(20.0, 20.0), 1, Disturbance(0.0, 0.0), b, hp, DT)
    b11 = hp_input(hp, b, 20.0, 0.0, DT)
    loss = DT / b.c_a * (20.0 / b.r_a_inf)
    assert nxt.t_a == pytest.approx(20.0 + b11 - loss, abs=1e-12)
    assert nxt.t_m == pytest.approx(20.0 - DT / b.c_m * 20.0 / b.r_m_inf, abs=1e-12)


def test_plant_matches_state_space(rng):
    for _ in range(100):
        b = NOMINAL_BUILDING.scaled({k: rng.uniform(0.75, 1.25) for k in NOMINAL_BUILDING.to_dict()})
        hp = HeatPumpModel(rng.uniform(-0.1, 0.1), rng.uniform(4, 14), 3.0)
        dt = rng.uniform(0.01, 0.25)
        ss = discretize(b, dt)
        s = ThermalState(rng.uniform(10, 25), rng.uniform(10, 25))
        d = Disturbance(rng.uniform(-15, 10), rng.uniform(0, 0.8))
        u = int(rng.integers(0, 2))
        nxt = plant_step(s, u, d, b, hp, dt)
        x = ss.a @ s.as_array() + ss.e @ np.array([d.t_inf, d.g])
        x[0] += u * hp_input(hp, b, s.t_a, d.t_inf, dt)
        np.testing.assert_allclose(nxt.as_array(), x, atol=1e-12)


def test_offset_invariance(rng):
    for _ in range(50):
        s = ThermalState(rng.uniform(10, 25), rng.uniform(10, 25))
        t_inf = rng.uniform(-10, 10)
        c = rng.uniform(-20, 20)
        n1 = plant_step(s, 0, Disturbance(t_inf, 0.0), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
        n2 = plant_step(ThermalState(s.t_a + c, s.t_m + c), 0, Disturbance(t_inf + c, 0.0), NOMINAL_BUILDING,
                        NOMINAL_HEAT_PUMP)
        assert n2.t_a - n1.t_a == pytest.approx(c, abs=1e-9)
        assert n2.t_m - n1.t_m == pytest.approx(c, abs=1e-9)


def test_monotone_in_outdoor_temperature(rng):
    for _ in range(50):
        s = ThermalState(rng.uniform(10, 25), rng.uniform(10, 25))
        u = int(rng.integers(0, 2))
        lo, hi = sorted(rng.uniform(-15, 10, 2))
        a = plant_step(s, u, Disturbance(lo, 0.2), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
        b = plant_step(s, u, Disturbance(hi, 0.2), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
        assert b.t_a >= a.t_a


def test_divergence_and_binary_control():
    with pytest.raises(DivergenceError):
        plant_step(ThermalState(59.99, 59.99), 1, Disturbance(59.0, 5.0), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, 0.25)
    with pytest.raises(ValueError):
        plant_step(ThermalState(20, 20), 2, Disturbance(0, 0), NOMINAL_BUILDING, NOMINAL_HEAT_PUMP)
