import json

import numpy as np
import pytest

from bcmpc.agent.model import Decision
from bcmpc.milp import CycleConstraint, PenaltyWeights
from bcmpc.scenarios import make_scenarios
from bcmpc.sim import (MpcConfig, MpcPolicy, RuleBasedPolicy, Trajectory, compare, evaluate, replay,
                       rule_based_policy, simulate, simulate_cached)


class Constant:
    cache_key = None

    def __init__(self, u, name="const"):
        self.u, self.name = u, name

    def decide(self, ctx):
        return Decision(self.u, self.u, float(self.u))


@pytest.fixture(scope="module")
def scen(libs, scfg):
    return make_scenarios(libs, scfg, 11, "eval", 0, 1, 400)[0]


def free(last=0):
    return CycleConstraint(3, 3, (last,) * 3)


@pytest.mark.parametrize("t_a,t_set,t_delta,cycle,want", [
    (18.0, 20.0, 0.5, free(0), 1),
    (21.0, 20.0, 0.5, free(1), 0),
    (20.0, 20.0, 0.5, free(1), 1),
    (20.0, 20.0, 0.5, free(0), 0),
    (18.0, 20.0, np.inf, free(1), 0),
    (18.0, 20.0, 0.5, CycleConstraint(3, 3, (1, 1, 0)), 0),
    (22.0, 20.0, 0.5, CycleConstraint(3, 3, (0, 0, 1)), 1),
])
def test_rule_based_examples(t_a, t_set, t_delta, cycle, want):
    assert rule_based_policy(t_a, t_set, t_delta, cycle) == want


def test_all_off_cools_and_costs_nothing(scen, scfg):
    t = simulate(Constant(0), scen, scfg, MpcConfig(horizon=6), 200)
    assert t.t_a[-1] < t.t_a[0]
    r = evaluate(t, PenaltyWeights(), warmup=10)
    assert r.energy_cost == 0 and r.energy_kwh == 0 and r.on_steps == 0
    assert r.objective == r.penalty_cost


def test_objective_decomposition(scen, scfg):
    t = simulate(RuleBasedPolicy(), scen, scfg, MpcConfig(horizon=6), 300)
    pw = PenaltyWeights(2.0, 0.5)
    r = evaluate(t, pw, warmup=20)
    u = t.u[20:]
    assert r.energy_kwh == pytest.approx(scen.hp.gamma * scen.dt * u.sum(), abs=1e-12)
    assert r.objective == pytest.approx(r.energy_cost + 2.0 * r.under + 0.5 * r.over, abs=1e-9)
    # independent per-step loop
    e = pen = 0.0
    for k in range(20, t.steps):
        e += t.price[k] * t.gamma * t.dt * t.u[k]
        if not np.isinf(t.t_delta[k]):
            pen += 2.0 * max(0, t.t_set[k] - t.t_delta[k] - t.t_a[k + 1])
            pen += 0.5 * max(0, t.t_a[k + 1] - t.t_set[k] - t.t_delta[k])
    assert r.objective == pytest.approx(e + pen, abs=1e-9)
    t2 = Trajectory.from_dict(t.to_dict())
    t2.price = 2 * t2.price
    assert evaluate(t2, pw, warmup=20).energy_cost == pytest.approx(2 * r.energy_cost)


def test_replay_and_round_trip(scen, scfg, tmp_path):
    t = simulate(RuleBasedPolicy(), scen, scfg, MpcConfig(horizon=6), 250)
    np.testing.assert_allclose(replay(t, scen), t.t_a, atol=1e-12)
    d = json.loads(json.dumps(t.to_dict()))
    t2 = Trajectory.from_dict(d)
    for k in ("t_a", "u", "t_delta", "price"):
        np.testing.assert_array_equal(getattr(t2, k), getattr(t, k))
    t.to_csv(tmp_path / "t.csv", "# hdr")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# hdr" and lines[1].startswith("step,") and len(lines) == 252
    assert evaluate(t, PenaltyWeights()).dwell_violations == 0


def test_mpc_beats_baseline(scen, scfg):
    mpc = MpcConfig(horizon=12)
    c = compare([RuleBasedPolicy(), MpcPolicy(mpc)], [scen], scfg, mpc, 200, warmup=24)
    rb, m = (c.reports[(scen.sid, p)] for p in ("baseline", "mpc"))
    assert m.objective <= rb.objective
    assert m.dwell_violations == 0 and rb.dwell_violations == 0
    assert c.per_building()[0]["improvement_pct_mpc"] >= 0


def test_identical_policies_zero_delta(scen, scfg):
    mpc = MpcConfig(horizon=6)
    c2 = compare([RuleBasedPolicy(), type("R", (RuleBasedPolicy,), {"name": "copy"})()], [scen], scfg, mpc, 100,
                 warmup=10)
    assert c2.per_building()[0]["improvement_pct_copy"] == 0.0
    agg = c2.aggregate()
    assert agg[0]["objective"] == agg[1]["objective"]
    with pytest.raises(ValueError):
        compare([RuleBasedPolicy(), RuleBasedPolicy()], [scen], scfg, mpc, 10)


def test_cache_reuses_expert(scen, scfg, tmp_path):
    mpc = MpcConfig(horizon=6)
    p = MpcPolicy(mpc)
    a, hit_a = simulate_cached(p, scen, scfg, mpc, 60, tmp_path)
    b, hit_b = simulate_cached(p, scen, scfg, mpc, 60, tmp_path)
    assert not hit_a and hit_b
    np.testing.assert_array_equal(a.u, b.u)
    _, hit_c = simulate_cached(MpcPolicy(MpcConfig(horizon=7)), scen, scfg, mpc, 60, tmp_path)
    assert not hit_c


def test_invalid_inputs(scen, scfg):
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(lp_method="cplex")
    with pytest.raises(ValueError):
        simulate(RuleBasedPolicy(), scen, scfg, MpcConfig(), 0)
    t = simulate(RuleBasedPolicy(), scen, scfg, MpcConfig(horizon=6), 10)
    with pytest.raises(ValueError):
        evaluate(t, PenaltyWeights(), warmup=10)
