"""Closed-loop simulation of thermostat policies and scoring with the MPC objective.

Scoring convention matches the MPC: step ``k`` pays for ``u[k]`` at
``price[k]`` and for the excursion of the *next* air temperature
``t_a[k+1]`` outside the step-``k`` band. Comfort violation is reported in
degC-steps (one step = ``dt`` hours). The first ``warmup`` steps are simulated
but not scored.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cipg
from .agent.model import Agent, Decision, predict_control
from .milp.bnb import first_control
from .milp.model import CycleConstraint, PenaltyWeights, dwell_violations
from .scenarios import Scenario, ScenarioConfig, comfort, instance_at
from .thermal import Disturbance, ThermalState, plant_step

TRAJECTORY_SCHEMA = "bcmpc.trajectory/1"
REPORT_SCHEMA = "bcmpc.report/1"
WARMUP_STEPS = 72


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 72
    penalty_under: float = 1.0
    penalty_over: float = 1.0
    min_on: int = 3
    min_off: int = 3
    lp_method: str = "highs"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lp_method not in ("highs", "simplex"):
            raise ValueError(f"unknown LP method {self.lp_method!r}")
        PenaltyWeights(self.penalty_under, self.penalty_over)

    @property
    def penalties(self) -> PenaltyWeights:
        return PenaltyWeights(self.penalty_under, self.penalty_over)

    def initial_cycle(self) -> CycleConstraint:
        return CycleConstraint(self.min_on, self.min_off, (0,) * max(self.min_on, self.min_off, 3))

    def to_dict(self):
        return asdict(self)


class StepContext:
    """What a policy may look at when deciding step ``k``; the MPC instance is built lazily."""

    def __init__(self, scenario: Scenario, scfg: ScenarioConfig, mpc: MpcConfig, schedule, k: int,
                 state: ThermalState, cycle: CycleConstraint):
        self.scenario, self.scfg, self.mpc, self.schedule = scenario, scfg, mpc, schedule
        self.k, self.state, self.cycle = k, state, cycle
        self._inst = None

    @property
    def instance(self):
        if self._inst is None:
            self._inst = instance_at(self.scenario, self.scfg, self.k, self.state, self.cycle,
                                     self.mpc.horizon, self.mpc.penalties, self.schedule)
        return self._inst

    @property
    def band(self):
        return float(self.schedule.t_set[self.k]), float(self.schedule.t_delta[self.k])


# ---- policies -----------------------------------------------------------------

def rule_based_policy(t_a: float, t_set: float, t_delta: float, cycle: CycleConstraint) -> int:
    """Deadband thermostat: on below the band, off above it, otherwise keep the last control.

    Away steps (infinite band) switch off. Dwell lockouts override everything.
    """
    forced = cycle.forced()
    if forced is not None:
        return forced
    if np.isinf(t_delta):
        return 0
    if t_a < t_set - t_delta:
        return 1
    if t_a > t_set + t_delta:
        return 0
    return cycle.history[-1]


class RuleBasedPolicy:
    name = "baseline"
    cache_key = None

    def decide(self, ctx: StepContext) -> Decision:
        t_set, t_delta = ctx.band
        u = rule_based_policy(ctx.state.t_a, t_set, t_delta, ctx.cycle)
        return Decision(u, u, float(u))


class MpcPolicy:
    name = "mpc"

    def __init__(self, mpc: MpcConfig):
        self.mpc = mpc
        self.cache_key = "mpc-" + hashlib.sha256(json.dumps(mpc.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def decide(self, ctx: StepContext) -> Decision:
        u = first_control(ctx.instance, lp_method=self.mpc.lp_method).u0
        return Decision(u, u, float(u))


class AgentPolicy:
    name = "bc"
    cache_key = None

    def __init__(self, agent: Agent, name: str = "bc"):
        self.agent = agent
        self.name = name
        self.raw = agent.features == cipg.RAW_SCHEMA

    def features(self, ctx: StepContext) -> np.ndarray:
        inst = ctx.instance
        if self.raw:
            return cipg.raw_features(ctx.state.t_a, ctx.scenario.building, ctx.scenario.hp, inst)
        return cipg.assemble(ctx.state.t_a, inst).flat()

    def decide(self, ctx: StepContext) -> Decision:
        return predict_control(self.agent, self.features(ctx), ctx.cycle)


# ---- trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    scenario: str
    policy: str
    t_a: np.ndarray  # (K+1,)
    t_m: np.ndarray
    u_raw: np.ndarray  # (K,)
    u: np.ndarray
    t_inf: np.ndarray
    g: np.ndarray
    price: np.ndarray
    t_set: np.ndarray
    t_delta: np.ndarray  # inf on away steps
    gamma: float
    dt: float
    initial_history: tuple = ()
    latency: np.ndarray = field(default_factory=lambda: np.zeros(0))  # seconds per decision

    @property
    def steps(self) -> int:
        return len(self.u)

    @property
    def power(self) -> np.ndarray:
        return self.gamma * self.u

    COLUMNS = ("step", "t_a", "t_m", "u_raw", "u_applied", "t_inf", "g", "price", "t_set", "t_delta",
               "lower", "upper", "power_kw", "t_a_next")

    def to_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as f:
            if header:
                f.write(header.rstrip("\n") + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for k in range(self.steps):
                inf = np.isinf(self.t_delta[k])
                w.writerow([k, repr(float(self.t_a[k])), repr(float(self.t_m[k])), int(self.u_raw[k]),
                            int(self.u[k]), repr(float(self.t_inf[k])), repr(float(self.g[k])),
                            repr(float(self.price[k])), repr(float(self.t_set[k])),
                            "inf" if inf else repr(float(self.t_delta[k])),
                            "" if inf else repr(float(self.t_set[k] - self.t_delta[k])),
                            "" if inf else repr(float(self.t_set[k] + self.t_delta[k])),
                            repr(float(self.power[k])), repr(float(self.t_a[k + 1]))])

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                v = [None if np.isinf(x) else float(x) for x in v.tolist()]
            d[k] = v
        d["schema"] = TRAJECTORY_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("schema") != TRAJECTORY_SCHEMA:
            raise ValueError("trajectory schema mismatch")
        d = dict(d)
        d.pop("schema")
        for k in ("t_a", "t_m", "u_raw", "u", "t_inf", "g", "price", "t_set", "t_delta", "latency"):
            d[k] = np.array([np.inf if x is None else x for x in d[k]], dtype=float)
        for k in ("u_raw", "u"):
            d[k] = d[k].astype(int)
        d["initial_history"] = tuple(d["initial_history"])
        return cls(**d)


def simulate(policy, scenario: Scenario, scfg: ScenarioConfig, mpc: MpcConfig, n_steps: int,
             observer=None) -> Trajectory:
    """Run ``policy`` in closed loop for ``n_steps`` from the scenario's initial state.

    ``observer(ctx, decision)`` is called before each plant step (used to
    record expert labels without affecting the rollout).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    schedule = comfort(scenario, scfg)
    state = scenario.initial_state()
    cycle = mpc.initial_cycle()
    hist0 = cycle.history
    t_a, t_m = [state.t_a], [state.t_m]
    u_raw, u_app, lat = [], [], []
    for k in range(n_steps):
        ctx = StepContext(scenario, scfg, mpc, schedule, k, state, cycle)
        t0 = time.perf_counter()
        dec = policy.decide(ctx)
        lat.append(time.perf_counter() - t0)
        if observer is not None:
            observer(ctx, dec)
        w = scenario.weather[k]
        state = plant_step(state, dec.u, Disturbance(float(w[0]), float(w[1])), scenario.building,
                           scenario.hp, scenario.dt)
        cycle = cycle.push(dec.u)
        t_a.append(state.t_a)
        t_m.append(state.t_m)
        u_raw.append(dec.u_raw)
        u_app.append(dec.u)
    sl = slice(0, n_steps)
    return Trajectory(
        scenario.sid, policy.name, np.array(t_a), np.array(t_m), np.array(u_raw, dtype=int),
        np.array(u_app, dtype=int), scenario.weather[sl, 0].copy(), scenario.weather[sl, 1].copy(),
        scenario.price[sl].copy(), schedule.t_set[sl].copy(), schedule.t_delta[sl].copy(),
        float(scenario.hp.gamma), float(scenario.dt), hist0, np.array(lat))


def replay(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    """Air temperatures obtained by re-applying the recorded controls to the plant."""
    state = ThermalState(float(traj.t_a[0]), float(traj.t_m[0]))
    out = [state.t_a]
    for k, u in enumerate(traj.u):
        w = scenario.weather[k]
        state = plant_step(state, int(u), Disturbance(float(w[0]), float(w[1])), scenario.building,
                           scenario.hp, scenario.dt)
        out.append(state.t_a)
    return np.array(out)


# ---- scoring -----------------------------------------------------------------------

@dataclass
class EvaluationReport:
    scenario: str
    policy: str
    objective: float
    energy_cost: float
    penalty_cost: float
    comfort_violation: float  # degC-steps
    under: float
    over: float
    energy_kwh: float
    on_steps: int
    steps: int
    switches: int
    dwell_violations: int

    def to_dict(self):
        return asdict(self)


def evaluate(traj: Trajectory, penalties: PenaltyWeights, warmup: int = WARMUP_STEPS,
             min_on: int = 3, min_off: int = 3) -> EvaluationReport:
    if not 0 <= warmup < traj.steps:
        raise ValueError("warm-up must be shorter than the trajectory")
    s = slice(warmup, traj.steps)
    nxt = traj.t_a[warmup + 1:]
    occ = ~np.isinf(traj.t_delta[s])
    lo = traj.t_set[s] - np.where(occ, traj.t_delta[s], 0)
    hi = traj.t_set[s] + np.where(occ, traj.t_delta[s], 0)
    under = float(np.sum(np.where(occ, np.maximum(0.0, lo - nxt), 0.0)))
    over = float(np.sum(np.where(occ, np.maximum(0.0, nxt - hi), 0.0)))
    u = traj.u[s]
    kwh = float(traj.gamma * traj.dt * u.sum())
    energy = float(np.sum(traj.price[s] * traj.gamma * traj.dt * u))
    pen = penalties.under * under + penalties.over * over
    full = np.concatenate([traj.initial_history, traj.u]).astype(int)
    return EvaluationReport(
        traj.scenario, traj.policy, energy + pen, energy, pen, under + over, under, over, kwh, int(u.sum()),
        traj.steps - warmup, int(np.sum(np.abs(np.diff(full)))),
        dwell_violations(full, min_on, min_off))


def scenario_digest(s: Scenario) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([s.sid, s.building.to_dict(), s.hp.to_dict(), s.tariff.name, s.dt],
                        sort_keys=True).encode())
    for arr in (s.weather, s.t_set, s.mode, s.price):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:20]


def simulate_cached(policy, scenario, scfg, mpc, n_steps, cache_dir=None) -> tuple[Trajectory, bool]:
    """Simulate, reusing a stored trajectory for deterministic expert policies."""
    key = getattr(policy, "cache_key", None)
    path = None
    if cache_dir is not None and key is not None:
        sk = hashlib.sha256(json.dumps([scfg.to_dict(), n_steps]).encode()).hexdigest()[:8]
        path = Path(cache_dir) / f"{key}-{scenario_digest(scenario)}-{sk}.json"
        if path.exists():
            return Trajectory.from_dict(json.loads(path.read_text())), True
    traj = simulate(policy, scenario, scfg, mpc, n_steps)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(traj.to_dict()))
        tmp.replace(path)
    return traj, False


@dataclass
class Comparison:
    trajectories: dict  # (scenario, policy) -> Trajectory
    reports: dict  # (scenario, policy) -> EvaluationReport
    policies: list
    scenarios: list
    cached: dict = field(default_factory=dict)

    def aggregate(self) -> list[dict]:
        rows = []
        for p in self.policies:
            reps = [self.reports[(s, p)] for s in self.scenarios]
            lat = np.concatenate([self.trajectories[(s, p)].latency for s in self.scenarios])
            rows.append({
                "policy": p,
                "objective": sum(r.objective for r in reps),
                "energy_cost": sum(r.energy_cost for r in reps),
                "penalty_cost": sum(r.penalty_cost for r in reps),
                "comfort_violation": sum(r.comfort_violation for r in reps),
                "energy_kwh": sum(r.energy_kwh for r in reps),
                "switches": sum(r.switches for r in reps),
                "dwell_violations": sum(r.dwell_violations for r in reps),
                "buildings": len(reps),
                "steps": sum(r.steps for r in reps),
                "mean_decision_s": float(lat.mean()) if len(lat) else float("nan"),
            })
        return rows

    def per_building(self, baseline: str = "baseline") -> list[dict]:
        """Objective per building and percent improvement over the baseline policy."""
        rows = []
        for b, s in enumerate(self.scenarios):
            base = self.reports[(s, baseline)].objective
            row = {"building": b, "scenario": s}
            for p in self.policies:
                r = self.reports[(s, p)]
                row[f"J_{p}"] = r.objective
                row[f"comfort_{p}"] = r.comfort_violation
                if p != baseline:
                    row[f"improvement_pct_{p}"] = 100.0 * (base - r.objective) / base if base > 0 else 0.0
            rows.append(row)
        return rows


def compare(policies: list, scenarios: list[Scenario], scfg: ScenarioConfig, mpc: MpcConfig, n_steps: int,
            warmup: int = WARMUP_STEPS, cache_dir=None) -> Comparison:
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ValueError("policy names must be unique")
    trajs, reps, cached = {}, {}, {}
    for s in scenarios:
        for p in policies:
            t, hit = simulate_cached(p, s, scfg, mpc, n_steps, cache_dir)
            trajs[(s.sid, p.name)] = t
            cached[(s.sid, p.name)] = hit
            reps[(s.sid, p.name)] = evaluate(t, mpc.penalties, warmup, mpc.min_on, mpc.min_off)
    return Comparison(trajs, reps, names, [s.sid for s in scenarios], cached)
