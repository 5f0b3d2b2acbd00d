"""Regenerate the shipped weather, tariff and setpoint fixtures (deterministic)."""
import csv
import math
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "bcmpc" / "data"


def weather(days=24, seed=7):
    rng = np.random.default_rng(seed)
    t0 = datetime(2023, 1, 2)
    mean = -2.0
    rows = []
    for d in range(days):
        mean = float(np.clip(mean + rng.normal(0, 2.0), -8.0, 5.0))
        amp = rng.uniform(2.0, 5.0)
        cloud = rng.uniform(0.25, 1.0)
        for h in range(24):
            t = mean + amp * math.cos(2 * math.pi * (h - 15) / 24) + rng.normal(0, 0.3)
            t = min(10.0, max(-15.0, t))
            s = math.sin(math.pi * (h - 7.5) / 9.0) if 7.5 < h < 16.5 else 0.0
            g = 0.5 * cloud * s ** 1.2 if s > 0 else 0.0
            rows.append(((t0 + timedelta(days=d, hours=h)).isoformat(timespec="minutes"), round(t, 2), round(g, 4)))
    with open(DATA / "weather_winter.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "t_inf", "g"])
        w.writerows(rows)


TARIFFS = {
    "tou2_evening": [(0, 16, 0.10), (16, 21, 0.28), (21, 24, 0.10)],
    "tou2_double": [(0, 7, 0.09), (7, 10, 0.22), (10, 17, 0.09), (17, 20, 0.22), (20, 24, 0.09)],
    "tou3": [(0, 7, 0.07), (7, 16, 0.14), (16, 20, 0.32), (20, 23, 0.14), (23, 24, 0.07)],
}


def tariffs():
    for name, rows in TARIFFS.items():
        with open(DATA / "tariffs" / f"{name}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["start_hour", "end_hour", "price"])
            w.writerows(rows)


def setpoints():
    rows = [("00:00", 19.5, "sleep"), ("06:30", 21.0, "home"), ("08:30", 19.5, "away"),
            ("17:30", 21.0, "home"), ("22:30", 19.5, "sleep")]
    with open(DATA / "setpoints_workday.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "t_set", "mode"])
        w.writerows(rows)


if __name__ == "__main__":
    weather()
    tariffs()
    setpoints()
