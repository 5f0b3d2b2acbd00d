"""Weather, tariff and setpoint libraries and randomized building scenarios.

Library files (all CSV with a header row):

* weather: ``timestamp, t_inf, g`` at a fixed spacing that divides one day,
  covering whole days; resampled linearly to the simulation step.
* tariff: ``start_hour, end_hour, price`` rows tiling 0..24 h.
* setpoints: ``timestamp, t_set, mode`` where timestamp is ``HH:MM`` within
  the day and mode is home, sleep or away; the template repeats daily.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path

import numpy as np

from .milp.model import ComfortSchedule, CycleConstraint, PenaltyWeights, Tariff, build_instance
from .thermal import (DT_DEFAULT, NOMINAL_BUILDING, NOMINAL_HEAT_PUMP, BuildingModel, HeatPumpModel,
                      ThermalState, discretize)

MODES = ("home", "sleep", "away")
HOME, SLEEP, AWAY = range(3)


class DataError(ValueError):
    """Malformed or insufficient input data file."""


def steps_per_day(dt: float = DT_DEFAULT) -> int:
    n = 24.0 / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError("dt must divide one day")
    return int(round(n))


def packaged(name: str) -> Path:
    return Path(str(resources.files("bcmpc") / "data" / name))


def _rows(path: Path, header: list[str]):
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with f:
        r = csv.reader(f)
        head = next(r, None)
        if head is None or [h.strip() for h in head] != header:
            raise DataError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(r, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _num(path, lineno, text, what):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: {what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise DataError(f"{path}:{lineno}: {what} must be finite")
    return v


@dataclass(frozen=True)
class WeatherLibrary:
    days: np.ndarray  # (D, steps_per_day, 2) at the simulation step
    source: str = ""


def load_weather(path, dt: float = DT_DEFAULT) -> WeatherLibrary:
    path = Path(path)
    stamps, vals = [], []
    for lineno, (ts, t, g) in _rows(path, ["timestamp", "t_inf", "g"]):
        try:
            stamps.append(datetime.fromisoformat(ts))
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad timestamp {ts!r}") from None
        gv = _num(path, lineno, g, "g")
        if gv < 0:
            raise DataError(f"{path}:{lineno}: g must be non-negative")
        vals.append((_num(path, lineno, t, "t_inf"), gv))
    if len(stamps) < 2:
        raise DataError(f"{path}: need at least two rows")
    spacing = (stamps[1] - stamps[0]).total_seconds() / 3600.0
    per_day = 24.0 / spacing if spacing > 0 else 0
    if spacing <= 0 or abs(per_day - round(per_day)) > 1e-9:
        raise DataError(f"{path}:3: sample spacing {spacing} h does not divide a day")
    for i in range(1, len(stamps)):
        if abs((stamps[i] - stamps[i - 1]).total_seconds() / 3600.0 - spacing) > 1e-9:
            raise DataError(f"{path}:{i + 2}: irregular timestamp spacing")
    per_day = int(round(per_day))
    if len(vals) % per_day:
        raise DataError(f"{path}: {len(vals)} rows do not cover whole days of {per_day} samples")
    raw = np.array(vals)
    n_days = len(raw) // per_day
    # resample with periodic wrap at the end of the record
    src_t = np.arange(len(raw) + 1) * spacing
    ext = np.vstack([raw, raw[:1]])
    spd = steps_per_day(dt)
    dst_t = np.arange(n_days * spd) * dt
    out = np.column_stack([np.interp(dst_t, src_t, ext[:, c]) for c in range(2)])
    return WeatherLibrary(out.reshape(n_days, spd, 2), str(path))


@dataclass(frozen=True)
class TariffProfile:
    name: str
    price: np.ndarray  # one day at the simulation step

    @property
    def pi_min(self):
        return float(self.price.min())

    @property
    def pi_max(self):
        return float(self.price.max())


def load_tariff(path, dt: float = DT_DEFAULT) -> TariffProfile:
    path = Path(path)
    spd = steps_per_day(dt)
    price = np.full(spd, np.nan)
    for lineno, (a, b, p) in _rows(path, ["start_hour", "end_hour", "price"]):
        a, b, p = (_num(path, lineno, a, "start_hour"), _num(path, lineno, b, "end_hour"),
                   _num(path, lineno, p, "price"))
        if not (0 <= a < b <= 24):
            raise DataError(f"{path}:{lineno}: need 0 <= start_hour < end_hour <= 24")
        if p < 0:
            raise DataError(f"{path}:{lineno}: negative price")
        i0, i1 = int(round(a / dt)), int(round(b / dt))
        if np.any(~np.isnan(price[i0:i1])):
            raise DataError(f"{path}:{lineno}: overlapping tariff periods")
        price[i0:i1] = p
    if np.any(np.isnan(price)):
        raise DataError(f"{path}: tariff periods do not cover the full day")
    if price.max() <= price.min():
        raise DataError(f"{path}: flat tariff (pi_max == pi_min)")
    return TariffProfile(path.stem, price)


@dataclass(frozen=True)
class SetpointTemplate:
    t_set: np.ndarray  # one day
    mode: np.ndarray


def load_setpoints(path, dt: float = DT_DEFAULT) -> SetpointTemplate:
    path = Path(path)
    spd = steps_per_day(dt)
    marks = []
    for lineno, (ts, t, mode) in _rows(path, ["timestamp", "t_set", "mode"]):
        try:
            hh, mm = ts.split(":")
            start = int(hh) + int(mm) / 60.0
        except ValueError:
            raise DataError(f"{path}:{lineno}: timestamp must be HH:MM, got {ts!r}") from None
        if mode not in MODES:
            raise DataError(f"{path}:{lineno}: mode must be one of {', '.join(MODES)}")
        if marks and start <= marks[-1][0]:
            raise DataError(f"{path}:{lineno}: timestamps must increase")
        marks.append((start, _num(path, lineno, t, "t_set"), MODES.index(mode)))
    if not marks or marks[0][0] != 0:
        raise DataError(f"{path}: first row must start at 00:00")
    t_set = np.empty(spd)
    mode = np.empty(spd, dtype=int)
    for i, (start, t, m) in enumerate(marks):
        end = marks[i + 1][0] if i + 1 < len(marks) else 24.0
        sl = slice(int(round(start / dt)), int(round(end / dt)))
        t_set[sl] = t
        mode[sl] = m
    return SetpointTemplate(t_set, mode)


@dataclass(frozen=True)
class Libraries:
    weather: WeatherLibrary
    tariffs: tuple
    setpoints: SetpointTemplate | None = None

    @classmethod
    def load(cls, weather=None, tariffs=None, setpoints=None, dt: float = DT_DEFAULT) -> "Libraries":
        w = load_weather(weather or packaged("weather_winter.csv"), dt)
        if tariffs is None:
            tariffs = sorted(packaged("tariffs").glob("*.csv"))
        tl = tuple(load_tariff(p, dt) for p in tariffs)
        if not tl or len(w.days) == 0:
            raise DataError("weather and tariff libraries must be nonempty")
        sp = load_setpoints(setpoints, dt) if setpoints else None
        return cls(w, tl, sp)


@dataclass(frozen=True)
class ScenarioConfig:
    spread: float = 0.25
    buildings_per_day: int = 10
    home_band: float = 0.5
    sleep_band: float = 1.0
    home_setpoint: tuple = (20.0, 22.0)
    sleep_setpoint: tuple = (19.0, 20.5)
    wake: float = 6.5  # hours; each transition is jittered uniformly by +-jitter
    leave: float = 8.5
    back: float = 17.5
    sleep: float = 22.5
    jitter: float = 1.0
    workday_prob: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "home_setpoint", tuple(self.home_setpoint))
        object.__setattr__(self, "sleep_setpoint", tuple(self.sleep_setpoint))
        if not 0 <= self.spread < 1:
            raise ValueError("building randomization range must lie in [0, 1)")
        if self.buildings_per_day < 1:
            raise ValueError("buildings_per_day must be >= 1")
        if self.home_band <= 0 or self.sleep_band <= 0:
            raise ValueError("comfort bands must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Scenario:
    sid: str
    building: BuildingModel
    hp: HeatPumpModel
    weather: np.ndarray  # (T, 2)
    t_set: np.ndarray
    mode: np.ndarray
    tariff: TariffProfile
    price: np.ndarray
    dt: float = DT_DEFAULT

    @property
    def length(self) -> int:
        return len(self.price)

    def __post_init__(self):
        object.__setattr__(self, "_ss", discretize(self.building, self.dt))

    @property
    def ss(self):
        return self._ss

    def bands(self, home_band: float, sleep_band: float) -> np.ndarray:
        return np.select([self.mode == HOME, self.mode == SLEEP], [home_band, sleep_band], np.inf)

    def initial_state(self) -> ThermalState:
        return ThermalState(float(self.t_set[0]), float(self.t_set[0]))


def comfort(s: Scenario, cfg: ScenarioConfig) -> ComfortSchedule:
    return ComfortSchedule(s.t_set, s.bands(cfg.home_band, cfg.sleep_band))


def instance_at(s: Scenario, cfg: ScenarioConfig, k: int, state: ThermalState, cycle: CycleConstraint,
                horizon: int, penalties: PenaltyWeights, schedule: ComfortSchedule | None = None):
    """MPC instance for the decision at step ``k`` with perfect forecasts."""
    if k + horizon > s.length:
        raise DataError(f"scenario {s.sid} has {s.length} steps, need {k + horizon}")
    sched = schedule if schedule is not None else comfort(s, cfg)
    tariff = Tariff(s.price[k:k + horizon], s.tariff.pi_min, s.tariff.pi_max)
    return build_instance(s.building, s.hp, s.ss, state, s.weather[k:k + horizon],
                          sched.window(k, horizon), tariff, penalties, cycle, horizon)


def scenario_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    codes = {"train": 1, "eval": 2, "probe": 3}
    if purpose not in codes:
        raise ValueError(f"unknown scenario purpose {purpose!r}")
    code = codes[purpose]
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(code, *keys)))


def _scaled(rng, nominal, spread):
    d = nominal.to_dict()
    return {k: v * rng.uniform(1 - spread, 1 + spread) if spread else v for k, v in d.items()}


def _day_schedule(rng, cfg: ScenarioConfig, spd: int, dt: float, t_home: float, t_sleep: float):
    t_set = np.full(spd, t_sleep)
    mode = np.full(spd, SLEEP, dtype=int)

    def at(h):
        return int(np.clip(round((h + rng.uniform(-cfg.jitter, cfg.jitter)) / dt), 0, spd))

    wake, leave, back, sleep = at(cfg.wake), at(cfg.leave), at(cfg.back), at(cfg.sleep)
    workday = rng.uniform() < cfg.workday_prob
    leave = max(leave, wake)
    back = max(back, leave)
    sleep = max(sleep, back)
    t_set[wake:sleep] = t_home
    mode[wake:sleep] = HOME
    if workday:
        mode[leave:back] = AWAY
        t_set[leave:back] = t_sleep
    return t_set, mode


def random_scenario(rng: np.random.Generator, libs: Libraries, cfg: ScenarioConfig, n_steps: int, sid: str,
                    dt: float = DT_DEFAULT) -> Scenario:
    """One randomized building with weather, tariff and occupancy covering ``n_steps``."""
    spd = steps_per_day(dt)
    n_days = -(-n_steps // spd)
    building = BuildingModel(**_scaled(rng, NOMINAL_BUILDING, cfg.spread))
    hp = HeatPumpModel(**_scaled(rng, NOMINAL_HEAT_PUMP, cfg.spread))
    tariff = libs.tariffs[int(rng.integers(len(libs.tariffs)))]
    wdays = libs.weather.days
    start = int(rng.integers(len(wdays)))
    weather = np.concatenate([wdays[(start + d) % len(wdays)] for d in range(n_days)])
    if libs.setpoints is not None:
        t_set = np.tile(libs.setpoints.t_set, n_days)
        mode = np.tile(libs.setpoints.mode, n_days)
    else:
        t_home = round(rng.uniform(*cfg.home_setpoint), 1)
        t_sleep = round(min(rng.uniform(*cfg.sleep_setpoint), t_home), 1)
        days = [_day_schedule(rng, cfg, spd, dt, t_home, t_sleep) for _ in range(n_days)]
        t_set = np.concatenate([d[0] for d in days])
        mode = np.concatenate([d[1] for d in days])
    price = np.tile(tariff.price, n_days)
    return Scenario(sid, building, hp, weather[:n_steps], t_set[:n_steps], mode[:n_steps], tariff,
                    price[:n_steps], dt)


def make_scenarios(libs: Libraries, cfg: ScenarioConfig, seed: int, purpose: str, group: int, count: int,
                   n_steps: int, dt: float = DT_DEFAULT) -> list[Scenario]:
    """``count`` independent scenarios; ids and draws depend only on (seed, purpose, group, index)."""
    return [random_scenario(scenario_rng(seed, purpose, group, i), libs, cfg, n_steps,
                            f"{purpose}-g{group:02d}-b{i:02d}", dt) for i in range(count)]
