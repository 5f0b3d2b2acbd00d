"""Command-line pipeline: data generation, DAgger training, evaluation and ablation.

Every output carries the run's config hash and a schema tag. Wall-clock
measurements go to separate ``timings*.json`` files so that all other outputs
are byte-identical across reruns with the same seed.

Exit codes: 0 ok, 2 configuration error, 3 data/model/checkpoint error,
4 solver failure or plant divergence, 5 DAgger did not converge.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cipg
from .agent.dataset import DatasetError, file_sha256, write_dataset
from .agent.model import Agent, SchemaError, load, save
from .agent.train import TrainConfig
from .dagger import (Checkpoint, CheckpointError, DaggerConfig, RolloutError, collect, config_hash, eval_scenarios,
                     fit_agent, iteration_scenarios, run_dagger)
from .milp.bnb import first_control
from .milp.model import SolverError
from .plotting import ablation_bars, improvement_bars, learning_curve, trajectory_panel
from .scenarios import DataError, Libraries, ScenarioConfig, comfort, make_scenarios, packaged, steps_per_day
from .sim import AgentPolicy, MpcConfig, MpcPolicy, RuleBasedPolicy, StepContext, compare, simulate
from .thermal import DivergenceError, ThermalState

log = logging.getLogger("bcmpc")

RUN_SCHEMA = "bcmpc.run/1"
TABLE_SCHEMA = "bcmpc.policy-summary/1"
BUILDING_SCHEMA = "bcmpc.per-building/1"
ABLATION_SCHEMA = "bcmpc.ablation/1"
COMFORT_UNIT = "degC-steps"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_NONCONVERGED = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    trajectories: int = 2  # scenarios whose per-step CSVs are exported
    figure_days: float = 2.0
    probe_horizon: int = 72
    probe_decisions: int = 6
    probe_repeats: int = 20

    def __post_init__(self):
        if self.trajectories < 0 or self.probe_horizon < 1 or self.probe_decisions < 1 or self.probe_repeats < 1:
            raise ValueError("evaluation options must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    weather: str | None = None
    tariffs: list | None = None
    setpoints: str | None = None
    out: str = "runs/default"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    dagger: DaggerConfig = field(default_factory=DaggerConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    evaluation: EvalOptions = field(default_factory=EvalOptions)

    SECTIONS = {"scenario": ScenarioConfig, "dagger": DaggerConfig, "mpc": MpcConfig, "evaluation": EvalOptions}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known - {"schema"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = {}
        try:
            for k, v in d.items():
                if k == "schema":
                    continue
                if k in cls.SECTIONS:
                    sec = cls.SECTIONS[k]
                    if not isinstance(v, dict):
                        raise ConfigError(f"section {k!r} must be an object")
                    bad = set(v) - {f.name for f in fields(sec)}
                    if bad:
                        raise ConfigError(f"unknown keys in {k!r}: {sorted(bad)}")
                    if sec is DaggerConfig:
                        v = dict(v)
                        if isinstance(v.get("train"), dict):
                            tbad = set(v["train"]) - {f.name for f in fields(TrainConfig)}
                            if tbad:
                                raise ConfigError(f"unknown keys in 'dagger.train': {sorted(tbad)}")
                        kw[k] = DaggerConfig.from_dict(v)
                    else:
                        kw[k] = sec(**v)
                else:
                    kw[k] = v
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cfg

    def to_dict(self) -> dict:
        d = {"schema": RUN_SCHEMA, "seed": self.seed, "weather": self.weather, "tariffs": self.tariffs,
             "setpoints": self.setpoints, "out": self.out}
        for k in self.SECTIONS:
            v = getattr(self, k)
            d[k] = v.to_dict() if hasattr(v, "to_dict") else asdict(v)
        return d

    def input_files(self) -> list[Path]:
        w = Path(self.weather) if self.weather else packaged("weather_winter.csv")
        t = [Path(p) for p in self.tariffs] if self.tariffs else sorted(packaged("tariffs").glob("*.csv"))
        s = [Path(self.setpoints)] if self.setpoints else []
        return [w, *t, *s]

    def hash(self) -> str:
        """Digest of everything that determines results: settings, seed and input file contents."""
        d = self.to_dict()
        d.pop("out")
        for k in ("weather", "tariffs", "setpoints"):
            d.pop(k)
        files = self.input_files()
        for p in files:
            if not p.exists():
                raise DataError(f"input file not found: {p}")
        d["inputs"] = [file_sha256(p) for p in files]
        return config_hash(d)

    def libraries(self) -> Libraries:
        return Libraries.load(self.weather, self.tariffs, self.setpoints)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(d)


# ---- output helpers ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, schema: str, chash: str, rows: list[dict], columns: list[str] | None = None):
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as f:
        f.write(f"# schema={schema} config_hash={chash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_json(path: Path, obj):
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o
    Path(path).write_text(json.dumps(clean(obj), indent=1, sort_keys=True) + "\n")


class Run:
    def __init__(self, cfg: RunConfig, jobs: int = 1, resume: bool = False):
        self.cfg, self.jobs, self.resume = cfg, jobs, resume
        self.chash = cfg.hash()
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.libs = cfg.libraries()
        d = {k: v for k, v in cfg.to_dict().items() if k != "out"}
        write_json(self.out / "run_config.json", {**d, "config_hash": self.chash})

    @property
    def cache(self):
        return self.out / "cache"

    def header(self, schema: str) -> dict:
        return {"schema": schema, "config_hash": self.chash}


# ---- commands ------------------------------------------------------------------------

def cmd_gen_data(run: Run) -> int:
    c = run.cfg
    scen = iteration_scenarios(run.libs, c.scenario, c.mpc, c.dagger, c.seed, 0)
    ds = collect(None, scen, c.scenario, c.mpc, 0, run.jobs)
    path = run.out / "dataset_iter0.csv.gz"
    write_dataset(ds, path, run.chash)
    log.info("wrote %d samples (%d buildings x %d days x %d steps) to %s", len(ds), c.scenario.buildings_per_day,
             c.dagger.initial_days, steps_per_day(), path)
    return EXIT_OK


def _dagger(run: Run, resume: bool | None = None):
    c = run.cfg
    ck = Checkpoint(run.out / "checkpoint", run.chash)
    resume = run.resume if resume is None else resume
    return run_dagger(run.libs, c.scenario, c.mpc, c.dagger, c.seed, ck, resume, run.jobs, run.cache)


def cmd_dagger(run: Run) -> int:
    res = _dagger(run)
    size = save(res.agent, run.out / "model.json")
    with open(run.out / "dagger_report.jsonl", "w") as f:
        f.write(json.dumps({**run.header("bcmpc.dagger-report/1"), "converged": res.converged,
                            "iterations": len(res.history), "model_bytes": size}, sort_keys=True) + "\n")
        for rep in res.history:
            f.write(json.dumps(rep, sort_keys=True) + "\n")
    learning_curve(res.history, run.out / "dagger_learning.png", run.chash)
    write_json(run.out / "timings_dagger.json", {**run.header("bcmpc.timings/1"), **res.timings})
    if not res.converged:
        log.warning("objective gap %.3f still above epsilon %.3f after %d iterations", res.history[-1]["gap"],
                    res.history[-1]["epsilon"], len(res.history))
        return EXIT_NONCONVERGED
    return EXIT_OK


def latency_probe(agent: Agent, run: Run) -> dict:
    """Per-decision wall clock of the MPC and the agent on identical states at the probe horizon."""
    c, opt = run.cfg, run.cfg.evaluation
    mpc = MpcConfig(**{**c.mpc.to_dict(), "horizon": opt.probe_horizon})
    spd = steps_per_day()
    (sc,) = make_scenarios(run.libs, c.scenario, c.seed, "probe", 0, 1, spd + opt.probe_horizon)
    base = simulate(RuleBasedPolicy(), sc, c.scenario, mpc, spd)
    sched = comfort(sc, c.scenario)
    ks = np.linspace(0, spd - 1, opt.probe_decisions).astype(int)
    policy = AgentPolicy(agent)
    mpc_s, agent_s, nodes = [], [], []
    for k in ks:
        cyc = mpc.initial_cycle()
        for u in base.u[:k]:
            cyc = cyc.push(int(u))
        state = ThermalState(float(base.t_a[k]), float(base.t_m[k]))
        t0 = time.perf_counter()
        ctx = StepContext(sc, c.scenario, mpc, sched, int(k), state, cyc)
        fc = first_control(ctx.instance, lp_method=mpc.lp_method)
        mpc_s.append(time.perf_counter() - t0)
        nodes.append(fc.nodes)
        t0 = time.perf_counter()
        for _ in range(opt.probe_repeats):
            ctx = StepContext(sc, c.scenario, mpc, sched, int(k), state, cyc)
            policy.decide(ctx)
        agent_s.append((time.perf_counter() - t0) / opt.probe_repeats)
    m, a = float(np.mean(mpc_s)), float(np.mean(agent_s))
    return {"horizon": opt.probe_horizon, "steps": ks.tolist(), "mpc_s": mpc_s, "agent_s": agent_s,
            "mpc_nodes": nodes, "mpc_mean_s": m, "agent_mean_s": a, "ratio": a / m}


def _evaluate(run: Run, policies: list):
    c = run.cfg
    scen, n = eval_scenarios(run.libs, c.scenario, c.mpc, c.dagger, c.seed)
    return compare(policies, scen, c.scenario, c.mpc, n, c.dagger.warmup_steps, run.cache), scen


TABLE_COLUMNS = ["policy", "objective", "energy_cost", "penalty_cost", "comfort_violation", "energy_kwh", "switches",
                 "dwell_violations", "buildings", "steps"]


def cmd_evaluate(run: Run, model: str | None) -> int:
    c = run.cfg
    path = Path(model) if model else run.out / "model.json"
    if not path.exists():
        raise DataError(f"model file not found: {path} (run 'bcmpc dagger' first or pass --model)")
    agent = load(path, features=cipg.FEATURE_SCHEMA)
    cmp, scen = _evaluate(run, [RuleBasedPolicy(), AgentPolicy(agent), MpcPolicy(c.mpc)])
    table = cmp.aggregate()
    write_csv(run.out / "policy_summary.csv", TABLE_SCHEMA, run.chash, table, TABLE_COLUMNS)
    per = cmp.per_building("baseline")
    write_csv(run.out / "per_building.csv", BUILDING_SCHEMA, run.chash, per)
    tdir = run.out / "trajectories"
    tdir.mkdir(exist_ok=True)
    hdr = f"# schema=bcmpc.trajectory/1 config_hash={run.chash}"
    for s in cmp.scenarios[:c.evaluation.trajectories]:
        for p in cmp.policies:
            cmp.trajectories[(s, p)].to_csv(tdir / f"{s}_{p}.csv", hdr)
    improvement_bars(per, "bc", run.out / "bc_improvement.png", run.chash)
    improvement_bars(per, "mpc", run.out / "mpc_improvement.png", run.chash)
    s0 = cmp.scenarios[0]
    trajectory_panel({p: cmp.trajectories[(s0, p)] for p in cmp.policies}, run.out / "trajectory.png",
                     run.chash, c.dagger.warmup_steps, int(c.evaluation.figure_days * steps_per_day()))
    agg = {r["policy"]: r for r in table}
    jb, jbc, jm = (agg[p]["objective"] for p in ("baseline", "bc", "mpc"))
    report = {
        **run.header("bcmpc.report/1"),
        "comfort_unit": COMFORT_UNIT,
        "aggregate": [{k: r[k] for k in TABLE_COLUMNS} for r in table],
        "per_building": per,
        "mpc_improvement_pct": 100.0 * (jb - jm) / jb if jb > 0 else 0.0,
        "bc_over_mpc": jbc / jm if jm > 0 else math.inf,
        "dwell_violations": {p: agg[p]["dwell_violations"] for p in agg},
        "model_bytes": path.stat().st_size,
        "model_params": agent.n_params(),
        "model_raw_weight_bytes": 8 * agent.n_params(),
    }
    write_json(run.out / "report.json", report)
    probe = latency_probe(agent, run)
    lat = {r["policy"]: r["mean_decision_s"] for r in table}
    write_json(run.out / "timings.json", {**run.header("bcmpc.timings/1"), "mean_decision_s": lat,
                                          "mpc_cached": {f"{k[0]}:{k[1]}": v for k, v in cmp.cached.items()
                                                         if k[1] == "mpc"},
                                          "probe": probe})
    log.info("J baseline %.2f, bc %.2f, mpc %.2f; agent/MPC latency at N=%d: %.2e", jb, jbc, jm,
             probe["horizon"], probe["ratio"])
    return EXIT_OK


def cmd_ablate(run: Run) -> int:
    c = run.cfg
    res = _dagger(run, resume=True)
    ds = res.dataset
    tcfg = TrainConfig(**{**c.dagger.train.to_dict(), "seed": c.seed})
    vf = c.dagger.val_fraction
    ampc, m_b = fit_agent(ds.subset(ds.iteration == 0), tcfg, c.seed, vf, "cipg")
    raw, m_c = fit_agent(ds, tcfg, c.seed, vf, "raw")
    ffnn, m_f = fit_agent(ds, TrainConfig(**{**tcfg.to_dict(), "kind": "ffnn"}), c.seed, vf, "cipg")
    variants = [("cipg_dagger", res.agent, res.history[-1]["val_accuracy"], len(ds)),
                ("cipg_ampc", ampc, m_b.val_accuracy[-1] if m_b.val_accuracy else None, m_b.n_train + m_b.n_val),
                ("raw_dagger", raw, m_c.val_accuracy[-1] if m_c.val_accuracy else None, len(ds))]
    adir = run.out / "ablation"
    adir.mkdir(exist_ok=True)
    for name, agent, _, _ in variants + [("ffnn_dagger", ffnn, None, 0)]:
        save(agent, adir / f"{name}.json")
    pols = [AgentPolicy(a, n) for n, a, _, _ in variants] + [AgentPolicy(ffnn, "ffnn_dagger"), MpcPolicy(c.mpc)]
    cmp, _ = _evaluate(run, pols)
    agg = {r["policy"]: r for r in cmp.aggregate()}
    rows = [{"variant": n, "objective": agg[n]["objective"], "energy_cost": agg[n]["energy_cost"],
             "comfort_violation": agg[n]["comfort_violation"], "dwell_violations": agg[n]["dwell_violations"],
             "val_accuracy": "" if va is None else va, "samples": size}
            for n, _, va, size in variants]
    write_csv(run.out / "ablation.csv", ABLATION_SCHEMA, run.chash, rows)
    net_rows = []
    for name, agent, va in (("rt-gru", res.agent, res.history[-1]["val_accuracy"]),
                            ("ffnn", ffnn, m_f.val_accuracy[-1] if m_f.val_accuracy else None)):
        pol = "cipg_dagger" if name == "rt-gru" else "ffnn_dagger"
        net_rows.append({"network": name, "objective": agg[pol]["objective"],
                         "comfort_violation": agg[pol]["comfort_violation"],
                         "val_accuracy": "" if va is None else va, "params": agent.n_params(),
                         "model_bytes": len(agent.dumps().encode())})
    write_csv(run.out / "ablation_networks.csv", "bcmpc.ablation-networks/1", run.chash, net_rows)
    ablation_bars(rows, run.out / "ablation.png", run.chash)
    write_json(run.out / "ablation.json", {**run.header(ABLATION_SCHEMA), "variants": rows, "networks": net_rows,
                                           "J_MPC": agg["mpc"]["objective"], "comfort_unit": COMFORT_UNIT})
    return EXIT_OK


# ---- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (defaults are used for omitted keys)")
    common.add_argument("--seed", type=int, help="override the configured rng seed")
    common.add_argument("--jobs", type=int, default=1, help="maximum concurrent rollout processes (default 1)")
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("--resume", action="store_true", help="continue DAgger from the checkpoint in the output dir")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p = argparse.ArgumentParser(prog="bcmpc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="closed-loop MPC samples for the initial buildings")
    sub.add_parser("dagger", parents=[common], help="train the cloned policy with dataset aggregation")
    ev = sub.add_parser("evaluate", parents=[common], help="compare baseline, cloned policy and MPC")
    ev.add_argument("--model", help="agent file (default: <out>/model.json)")
    sub.add_parser("ablate", parents=[common], help="training-representation comparison")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.out:
            cfg.out = args.out
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = Run(cfg, args.jobs, args.resume)
        if args.command == "gen-data":
            return cmd_gen_data(run)
        if args.command == "dagger":
            return cmd_dagger(run)
        if args.command == "evaluate":
            return cmd_evaluate(run, args.model)
        return cmd_ablate(run)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except (DataError, DatasetError, SchemaError, CheckpointError) as exc:
        log.error("data: %s", exc)
        return EXIT_DATA
    except (SolverError, DivergenceError, RolloutError) as exc:
        log.error("solver: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
