"""Imitation of the MPC by dataset aggregation.

Iteration 0 rolls the MPC itself through a batch of randomized buildings and
trains on its decisions. Each later iteration lets the current agent drive
fresh buildings while the MPC labels every visited state, appends those
samples, and retrains from scratch. The loop stops once the agent's
evaluation objective is within ``epsilon`` of the MPC's.

All rollouts are pure functions of (seed, configs, data libraries), so runs
are reproducible and can resume from a checkpoint directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cipg
from .agent.dataset import Dataset, DatasetError, file_sha256, read_dataset, write_dataset
from .agent.model import Agent, FeatureScaler, SchemaError
from .agent.train import TrainConfig, TrainMetrics, fit_scaler, train_representation
from .milp.bnb import first_control
from .milp.model import SolverError
from .scenarios import Libraries, Scenario, ScenarioConfig, make_scenarios, steps_per_day
from .sim import WARMUP_STEPS, AgentPolicy, MpcConfig, MpcPolicy, compare, simulate
from .thermal import DivergenceError

log = logging.getLogger(__name__)

STATE_SCHEMA = "bcmpc.dagger-state/1"
REPORT_SCHEMA = "bcmpc.dagger-report/1"
PI4_COL = cipg.N_STATIC + 5
AWAY_COL = cipg.N_STATIC + 7


class RolloutError(RuntimeError):
    """A scenario rollout failed; carries the scenario id and step."""

    def __init__(self, sid: str, step: int, cause: Exception):
        super().__init__(f"scenario {sid} step {step}: {type(cause).__name__}: {cause}")
        self.sid, self.step, self.cause = sid, step, cause


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class DaggerConfig:
    epsilon: float | None = None  # absolute objective gap; None means epsilon_frac * J_MPC
    epsilon_frac: float = 0.15
    max_iterations: int = 7  # aggregation rounds after the initial MPC round
    min_iterations: int = 0
    initial_days: int = 1
    days_per_iteration: int = 2
    val_fraction: float = 0.2
    eval_scenarios: int = 5
    eval_days: int = 5
    warmup_steps: int = WARMUP_STEPS
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.epsilon_frac > 0:
            raise ValueError("epsilon_frac must be positive")
        if min(self.initial_days, self.days_per_iteration, self.eval_scenarios, self.eval_days) < 1:
            raise ValueError("day and scenario counts must be >= 1")
        if self.max_iterations < 0 or not 0 <= self.min_iterations <= self.max_iterations:
            raise ValueError("need 0 <= min_iterations <= max_iterations")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        if d["epsilon"] is not None and math.isinf(d["epsilon"]):
            d["epsilon"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DaggerConfig":
        d = dict(d)
        if d.get("epsilon") == "inf":
            d["epsilon"] = math.inf
        return cls(**d)


# ---- rollouts --------------------------------------------------------------------

def _record(ctx, label: int, iteration: int) -> dict:
    inst = ctx.instance
    sc = ctx.scenario
    return {
        "features": cipg.assemble(ctx.state.t_a, inst).flat(),
        "raw": cipg.raw_features(ctx.state.t_a, sc.building, sc.hp, inst),
        "label": int(label),
        "scenario": sc.sid,
        "iteration": iteration,
        "step": ctx.k,
        "t_a": ctx.state.t_a,
        "t_m": ctx.state.t_m,
    }


def _run(policy, scenario, scfg, mpc, n_steps, observer):
    step = {"k": 0}

    def watch(ctx, dec):
        step["k"] = ctx.k
        observer(ctx, dec)

    try:
        return simulate(policy, scenario, scfg, mpc, n_steps, observer=watch)
    except (SolverError, DivergenceError) as exc:
        raise RolloutError(scenario.sid, step["k"], exc) from exc


def mpc_rollout(scenario: Scenario, scfg: ScenarioConfig, mpc: MpcConfig, n_steps: int,
                iteration: int = 0) -> list[dict]:
    """Closed-loop MPC; every applied first control becomes a sample."""
    recs = []
    _run(MpcPolicy(mpc), scenario, scfg, mpc, n_steps, lambda ctx, dec: recs.append(_record(ctx, dec.u, iteration)))
    return recs


def agent_rollout(agent: Agent, scenario: Scenario, scfg: ScenarioConfig, mpc: MpcConfig, n_steps: int,
                  iteration: int) -> list[dict]:
    """The agent drives the plant; the MPC optimum at each visited state is the label."""
    recs = []

    def label(ctx, dec):
        u = first_control(ctx.instance, lp_method=mpc.lp_method).u0
        recs.append(_record(ctx, u, iteration))

    _run(AgentPolicy(agent), scenario, scfg, mpc, n_steps, label)
    return recs


def _task(args):
    kind, payload, scenario, scfg, mpc, n_steps, iteration = args
    if kind == "mpc":
        return mpc_rollout(scenario, scfg, mpc, n_steps, iteration)
    return agent_rollout(Agent.from_dict(payload), scenario, scfg, mpc, n_steps, iteration)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))  # map preserves submission order


def iteration_scenarios(libs: Libraries, scfg: ScenarioConfig, mpc: MpcConfig, dcfg: DaggerConfig, seed: int,
                        iteration: int) -> list[Scenario]:
    """One-day training buildings; each simulated day has its own group index."""
    spd = steps_per_day()
    if iteration == 0:
        groups = range(dcfg.initial_days)
    else:
        first = dcfg.initial_days + (iteration - 1) * dcfg.days_per_iteration
        groups = range(first, first + dcfg.days_per_iteration)
    out = []
    for g in groups:
        out += make_scenarios(libs, scfg, seed, "train", g, scfg.buildings_per_day, spd + mpc.horizon)
    return out


def collect(agent: Agent | None, scenarios: list[Scenario], scfg: ScenarioConfig, mpc: MpcConfig,
            iteration: int, jobs: int = 1) -> Dataset:
    """Samples from one round of rollouts (MPC-driven when ``agent`` is None), in canonical order."""
    n = steps_per_day()
    payload = None if agent is None else agent.to_dict()
    kind = "mpc" if agent is None else "agent"
    tasks = [(kind, payload, s, scfg, mpc, n, iteration) for s in scenarios]
    recs = [r for batch in _map(_task, tasks, jobs) for r in batch]
    return Dataset.from_records(mpc.horizon, recs).sorted()


def dagger_iteration(agent: Agent, scenarios: list[Scenario], scfg: ScenarioConfig, mpc: MpcConfig,
                     iteration: int, jobs: int = 1) -> Dataset:
    return collect(agent, scenarios, scfg, mpc, iteration, jobs)


# ---- training and evaluation helpers ---------------------------------------------

def pi4_deciles(ds: Dataset) -> list[int]:
    """Distinct deciles of the current-step comfort position among occupied samples.

    Values outside the band land in deciles below 0 or above 9.
    """
    if not len(ds):
        return []
    occ = ds.features[:, AWAY_COL] < 0.5
    v = ds.features[occ, PI4_COL]
    return sorted({int(x) for x in np.floor(10 * v)})


def split(ds: Dataset, seed: int, fraction: float):
    """Building-level train/validation split; validation may be empty for tiny runs."""
    if fraction <= 0:
        return ds, ds.subset(np.zeros(len(ds), bool))
    mask = ds.validation_mask(seed, fraction)
    if mask.all():
        mask[:] = False
    return ds.subset(~mask), ds.subset(mask)


def fit_agent(ds: Dataset, tcfg: TrainConfig, seed: int, val_fraction: float, representation: str = "cipg",
              scaler: FeatureScaler | None = None) -> tuple[Agent, TrainMetrics]:
    tr, va = split(ds, seed, val_fraction)
    col = "features" if representation == "cipg" else "raw"
    val = (getattr(va, col), va.labels) if len(va) else (None, None)
    return train_representation(getattr(tr, col), tr.labels, representation, tcfg, scaler, *val)


def eval_scenarios(libs: Libraries, scfg: ScenarioConfig, mpc: MpcConfig, dcfg: DaggerConfig, seed: int):
    n = dcfg.warmup_steps + dcfg.eval_days * steps_per_day()
    return make_scenarios(libs, scfg, seed, "eval", 0, dcfg.eval_scenarios, n + mpc.horizon), n


# ---- checkpoints -------------------------------------------------------------------

def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


class Checkpoint:
    """Directory with the aggregated dataset, per-iteration agents and a checksummed state file."""

    def __init__(self, root, chash: str):
        self.root = Path(root)
        self.chash = chash

    @property
    def state_path(self):
        return self.root / "state.json"

    def dataset_path(self):
        return self.root / "dataset.csv.gz"

    def agent_path(self, i: int):
        return self.root / f"agent_iter{i:02d}.json"

    @property
    def timings_path(self):
        return self.root / "timings.json"

    def save(self, ds: Dataset, agent: Agent, iteration: int, history: list, scaler: FeatureScaler, done: bool,
             timings: dict | None = None):
        self.root.mkdir(parents=True, exist_ok=True)
        write_dataset(ds, self.dataset_path(), self.chash)
        ap = self.agent_path(iteration)
        ap.write_text(agent.dumps())
        files = {p.name: file_sha256(p) for p in (self.dataset_path(), ap)}
        state = {"schema": STATE_SCHEMA, "config_hash": self.chash, "iteration": iteration, "done": done,
                 "history": history, "scaler": scaler.to_dict(), "agent": ap.name, "files": files}
        if timings is not None:
            self.timings_path.write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n")
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=1, sort_keys=True) + "\n")
        tmp.replace(self.state_path)

    def load(self):
        """Returns (dataset, agent, iteration, history, scaler, done) or None if no checkpoint exists."""
        if not self.state_path.exists():
            return None
        try:
            st = json.loads(self.state_path.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{self.state_path}: unreadable ({exc})") from None
        if st.get("schema") != STATE_SCHEMA:
            raise CheckpointError(f"{self.state_path}: unsupported schema {st.get('schema')!r}")
        if st["config_hash"] != self.chash:
            raise CheckpointError(f"checkpoint was written for config {st['config_hash']}, current is {self.chash}")
        for name, digest in st["files"].items():
            p = self.root / name
            if not p.exists() or file_sha256(p) != digest:
                raise CheckpointError(f"checkpoint file {p} is missing or fails its checksum")
        try:
            ds = read_dataset(self.dataset_path())
            agent = Agent.from_dict(json.loads((self.root / st["agent"]).read_text()))
        except (DatasetError, SchemaError, KeyError) as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from None
        return ds, agent, st["iteration"], st["history"], FeatureScaler.from_dict(st["scaler"]), st["done"]

    def timings(self) -> dict:
        """Wall-clock record of the rounds already in the checkpoint (kept apart from the checksummed state)."""
        try:
            return dict(json.loads(self.timings_path.read_text()))
        except (FileNotFoundError, json.JSONDecodeError):
            return {}


# ---- main loop ----------------------------------------------------------------------

@dataclass
class DaggerResult:
    agent: Agent
    dataset: Dataset
    history: list  # one report dict per iteration
    converged: bool
    j_mpc: float
    timings: dict = field(default_factory=dict)
    metrics: TrainMetrics | None = None


def _report(iteration, new, ds, j_appr, j_mpc, eps, metrics: TrainMetrics, n_eval_steps) -> dict:
    gap = j_appr - j_mpc
    return {
        "schema": REPORT_SCHEMA,
        "iteration": iteration,
        "new_samples": int(new),
        "dataset_size": len(ds),
        "J_appr": j_appr,
        "J_MPC": j_mpc,
        "gap": gap,
        "gap_frac": gap / j_mpc if j_mpc > 0 else math.inf,
        "epsilon": eps,
        "within_epsilon": bool(gap <= eps),
        "train_samples": metrics.n_train,
        "val_samples": metrics.n_val,
        "final_loss": metrics.loss[-1],
        "train_accuracy": metrics.train_accuracy[-1],
        "val_accuracy": metrics.val_accuracy[-1] if metrics.val_accuracy else None,
        "val_majority": None if math.isnan(metrics.val_majority) else metrics.val_majority,
        "positive_fraction": metrics.positive_fraction,
        "pi4_deciles": pi4_deciles(ds),
        "eval_steps": n_eval_steps,
    }


def run_dagger(libs: Libraries, scfg: ScenarioConfig, mpc: MpcConfig, dcfg: DaggerConfig, seed: int,
               checkpoint: Checkpoint | None = None, resume: bool = False, jobs: int = 1,
               cache_dir=None, on_iteration=None) -> DaggerResult:
    """Aggregate-and-retrain until the evaluation gap is within epsilon or the round budget is spent."""
    timings = {}
    t0 = time.perf_counter()
    evals, n_eval = eval_scenarios(libs, scfg, mpc, dcfg, seed)
    mpc_cmp = compare([MpcPolicy(mpc)], evals, scfg, mpc, n_eval, dcfg.warmup_steps, cache_dir)
    j_mpc = mpc_cmp.aggregate()[0]["objective"]
    eps = dcfg.epsilon if dcfg.epsilon is not None else dcfg.epsilon_frac * j_mpc
    timings["eval_mpc_s"] = time.perf_counter() - t0

    state = checkpoint.load() if (checkpoint is not None and resume) else None
    if state is not None:
        ds, agent, start, history, scaler, done = state
        timings = {**checkpoint.timings(), "resumed_eval_mpc_s": timings["eval_mpc_s"]}
        log.info("resuming after iteration %d (%d samples)", start, len(ds))
        if done:
            return DaggerResult(agent, ds, history, history[-1]["within_epsilon"], j_mpc, timings)
        start += 1
        metrics = None
    else:
        ds, agent, history, scaler, start, metrics = None, None, [], None, 0, None

    tcfg = replace(dcfg.train, seed=seed)
    for it in range(start, dcfg.max_iterations + 1):
        t1 = time.perf_counter()
        scen = iteration_scenarios(libs, scfg, mpc, dcfg, seed, it)
        new = collect(agent if it else None, scen, scfg, mpc, it, jobs)
        ds = new if ds is None else ds.concat(new)
        timings[f"rollout_{it}_s"] = time.perf_counter() - t1
        if scaler is None:
            scaler = fit_scaler(split(ds, seed, dcfg.val_fraction)[0].features, "cipg")
        t1 = time.perf_counter()
        agent, metrics = fit_agent(ds, tcfg, seed, dcfg.val_fraction, "cipg", scaler)
        timings[f"train_{it}_s"] = time.perf_counter() - t1
        j_appr = _evaluate_agent(agent, evals, scfg, mpc, n_eval, dcfg.warmup_steps)
        rep = _report(it, len(new), ds, j_appr, j_mpc, eps, metrics, n_eval - dcfg.warmup_steps)
        history.append(rep)
        done = (rep["within_epsilon"] and it >= dcfg.min_iterations) or it == dcfg.max_iterations
        log.info("iteration %d: %d samples, J_appr %.3f, J_MPC %.3f, gap %.3f (eps %.3f), val acc %s", it, len(ds),
                 j_appr, j_mpc, rep["gap"], eps, rep["val_accuracy"])
        if checkpoint is not None:
            checkpoint.save(ds, agent, it, history, scaler, done, timings)
        if on_iteration is not None:
            on_iteration(rep)
        if done:
            break
    timings["total_s"] = time.perf_counter() - t0
    return DaggerResult(agent, ds, history, history[-1]["within_epsilon"], j_mpc, timings, metrics)


def _evaluate_agent(agent, scenarios, scfg, mpc, n_steps, warmup) -> float:
    cmp = compare([AgentPolicy(agent)], scenarios, scfg, mpc, n_steps, warmup)
    return cmp.aggregate()[0]["objective"]
