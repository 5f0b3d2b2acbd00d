import numpy as np
import pytest

from bcmpc.scenarios import (AWAY, HOME, SLEEP, DataError, Libraries, ScenarioConfig, comfort, instance_at,
                             load_setpoints, load_tariff, load_weather, make_scenarios, packaged, random_scenario,
                             scenario_rng, steps_per_day)
from bcmpc.milp import CycleConstraint, PenaltyWeights
from bcmpc.thermal import NOMINAL_BUILDING, NOMINAL_HEAT_PUMP


def test_packaged_libraries(libs):
    assert libs.weather.days.shape[1:] == (288, 2)
    assert len(libs.weather.days) >= 20
    t = libs.weather.days[..., 0]
    assert -15 <= t.min() and t.max() <= 10
    assert np.all(libs.weather.days[..., 1] >= 0)
    assert len(libs.tariffs) == 3
    for tr in libs.tariffs:
        assert tr.price.shape == (288,) and tr.pi_max > tr.pi_min


def test_zero_spread_gives_nominal(libs):
    s = random_scenario(scenario_rng(0, "train", 0), libs, ScenarioConfig(spread=0.0), 288, "x")
    assert s.building == NOMINAL_BUILDING and s.hp == NOMINAL_HEAT_PUMP


def test_seeded_scenarios_repeat(libs, scfg):
    a = make_scenarios(libs, scfg, 5, "eval", 1, 2, 400)
    b = make_scenarios(libs, scfg, 5, "eval", 1, 2, 400)
    for x, y in zip(a, b):
        assert x.sid == y.sid and x.building == y.building and x.hp == y.hp
        np.testing.assert_array_equal(x.weather, y.weather)
        np.testing.assert_array_equal(x.t_set, y.t_set)
    c = make_scenarios(libs, scfg, 5, "train", 1, 2, 400)
    assert c[0].building != a[0].building


def test_draws_stay_within_spread(libs):
    cfg = ScenarioConfig()
    nb, nh = NOMINAL_BUILDING.to_dict(), NOMINAL_HEAT_PUMP.to_dict()
    rng = np.random.default_rng(0)
    for i in range(10_000):
        s = random_scenario(rng, libs, cfg, 12, f"s{i}")
        for k, v in s.building.to_dict().items():
            assert 0.75 * nb[k] <= v <= 1.25 * nb[k]
        for k, v in s.hp.to_dict().items():
            lo, hi = sorted((0.75 * nh[k], 1.25 * nh[k]))
            assert lo <= v <= hi


def test_schedule_bands(libs, scfg):
    (s,) = make_scenarios(libs, scfg, 0, "train", 0, 1, 3 * 288)
    c = comfort(s, scfg)
    assert np.all(c.t_delta[s.mode == HOME] == 0.5)
    assert np.all(c.t_delta[s.mode == SLEEP] == 1.0)
    assert np.all(np.isinf(c.t_delta[s.mode == AWAY]))
    assert s.length == 3 * 288
    assert s.initial_state().t_a == s.t_set[0]


def test_instance_at_requires_lookahead(libs, scfg):
    (s,) = make_scenarios(libs, scfg, 0, "train", 0, 1, 300)
    cyc = CycleConstraint()
    inst = instance_at(s, scfg, 10, s.initial_state(), cyc, 24, PenaltyWeights())
    assert inst.horizon == 24 and inst.gamma == s.hp.gamma
    np.testing.assert_array_equal(inst.tariff.price, s.price[10:34])
    with pytest.raises(DataError):
        instance_at(s, scfg, 290, s.initial_state(), cyc, 24, PenaltyWeights())


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(spread=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(buildings_per_day=0)
    with pytest.raises(ValueError):
        scenario_rng(0, "bogus")


def test_weather_errors_name_the_line(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("timestamp,t_inf,g\n2023-01-01T00:00,1.0,0\n2023-01-01T12:00,oops,0\n")
    with pytest.raises(DataError, match=r"w\.csv:3"):
        load_weather(p)
    p.write_text("timestamp,t_inf,g\n2023-01-01T00:00,1.0,-1\n")
    with pytest.raises(DataError, match=":2"):
        load_weather(p)
    p.write_text("time,t,g\n")
    with pytest.raises(DataError, match=":1"):
        load_weather(p)
    p.write_text("timestamp,t_inf,g\n2023-01-01T00:00,1.0,0\n2023-01-01T12:00,3.0,0\n")
    lib = load_weather(p)
    assert lib.days.shape == (1, 288, 2)
    assert lib.days[0, 72, 0] == pytest.approx(2.0)  # linear between 00:00 and 12:00
    with pytest.raises(DataError):
        load_weather(tmp_path / "missing.csv")


def test_tariff_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("start_hour,end_hour,price\n0,12,0.1\n")
    with pytest.raises(DataError, match="cover"):
        load_tariff(p)
    p.write_text("start_hour,end_hour,price\n0,12,0.1\n11,24,0.2\n")
    with pytest.raises(DataError, match=":3"):
        load_tariff(p)
    p.write_text("start_hour,end_hour,price\n0,24,0.1\n")
    with pytest.raises(DataError, match="flat"):
        load_tariff(p)
    p.write_text("start_hour,end_hour,price\n0,17,0.1\n17,24,0.3\n")
    t = load_tariff(p)
    assert t.price[17 * 12 - 1] == 0.1 and t.price[17 * 12] == 0.3


def test_setpoint_template(tmp_path):
    sp = load_setpoints(packaged("setpoints_workday.csv"))
    assert sp.t_set.shape == (288,) and set(sp.mode.tolist()) <= {0, 1, 2}
    p = tmp_path / "s.csv"
    p.write_text("timestamp,t_set,mode\n00:00,19,sleep\n07:00,21,party\n")
    with pytest.raises(DataError, match=":3"):
        load_setpoints(p)
    libs = Libraries.load(setpoints=packaged("setpoints_workday.csv"))
    (s,) = make_scenarios(libs, ScenarioConfig(), 0, "eval", 0, 1, 2 * 288)
    np.testing.assert_array_equal(s.t_set, np.tile(sp.t_set, 2))


def test_steps_per_day():
    assert steps_per_day() == 288
    with pytest.raises(ValueError):
        steps_per_day(0.7)
