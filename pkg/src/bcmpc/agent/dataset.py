"""Labeled decision samples and their CSV (+ JSON sidecar) persistence.

Each row carries the grouped features, the ungrouped physical features used
by the ablation, the expert label and bookkeeping columns. Files ending in
``.gz`` are gzip-compressed with a zeroed timestamp so reruns are
byte-identical.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import cipg

DATASET_SCHEMA = "bcmpc.dataset/1"
META = ("scenario", "iteration", "step", "label", "t_a", "t_m")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    horizon: int
    features: np.ndarray  # (M, flat_length)
    raw: np.ndarray  # (M, raw_flat_length)
    labels: np.ndarray  # (M,) int
    scenario: np.ndarray  # (M,) str
    iteration: np.ndarray
    step: np.ndarray
    t_a: np.ndarray
    t_m: np.ndarray

    def __post_init__(self):
        m = len(self.labels)
        if self.features.shape != (m, cipg.flat_length(self.horizon)):
            raise DatasetError(f"feature block shape {self.features.shape} inconsistent with horizon {self.horizon}")
        if self.raw.shape != (m, cipg.raw_flat_length(self.horizon)):
            raise DatasetError("raw feature block shape inconsistent")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise DatasetError("labels must be binary")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, horizon: int) -> "Dataset":
        return cls(horizon, np.zeros((0, cipg.flat_length(horizon))), np.zeros((0, cipg.raw_flat_length(horizon))),
                   np.zeros(0, int), np.zeros(0, dtype=object), np.zeros(0, int), np.zeros(0, int),
                   np.zeros(0), np.zeros(0))

    @classmethod
    def from_records(cls, horizon: int, recs: list[dict]) -> "Dataset":
        if not recs:
            return cls.empty(horizon)
        return cls(
            horizon,
            np.array([r["features"] for r in recs], dtype=float),
            np.array([r["raw"] for r in recs], dtype=float),
            np.array([r["label"] for r in recs], dtype=int),
            np.array([r["scenario"] for r in recs], dtype=object),
            np.array([r["iteration"] for r in recs], dtype=int),
            np.array([r["step"] for r in recs], dtype=int),
            np.array([r["t_a"] for r in recs], dtype=float),
            np.array([r["t_m"] for r in recs], dtype=float),
        )

    def concat(self, other: "Dataset") -> "Dataset":
        if other.horizon != self.horizon:
            raise DatasetError("cannot aggregate datasets with different horizons")
        return Dataset(self.horizon, *(np.concatenate([getattr(self, k), getattr(other, k)])
                                       for k in ("features", "raw", "labels", "scenario", "iteration",
                                                 "step", "t_a", "t_m")))

    def subset(self, mask) -> "Dataset":
        return Dataset(self.horizon, *(getattr(self, k)[mask] for k in ("features", "raw", "labels", "scenario",
                                                                        "iteration", "step", "t_a", "t_m")))

    def sorted(self) -> "Dataset":
        """Canonical order (scenario, step), independent of rollout completion order."""
        order = sorted(range(len(self)), key=lambda i: (self.iteration[i], self.scenario[i], self.step[i]))
        return self.subset(np.array(order, dtype=int))

    def validation_mask(self, seed: int, fraction: float = 0.2) -> np.ndarray:
        """Whole buildings are held out, chosen by a stable hash of the scenario id."""
        held = {}
        for s in set(self.scenario.tolist()):
            h = int.from_bytes(hashlib.sha256(f"{seed}:{s}".encode()).digest()[:8], "big")
            held[s] = (h / 2 ** 64) < fraction
        return np.array([held[s] for s in self.scenario], dtype=bool)

    def columns(self) -> list[str]:
        return list(META) + cipg.column_names(self.horizon) + cipg.raw_column_names(self.horizon)


def _open_write(path: Path):
    if path.suffix == ".gz":
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return io.TextIOWrapper(gz, encoding="utf-8", newline=""), (gz, raw)
    return open(path, "w", encoding="utf-8", newline=""), ()


def _open_read(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _sidecar(path: Path) -> Path:
    name = path.name[:-3] if path.name.endswith(".gz") else path.name
    return path.with_name(name.rsplit(".", 1)[0] + ".schema.json")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(ds: Dataset, path, config_hash: str = "") -> Path:
    """Write rows and the schema sidecar; returns the sidecar path."""
    path = Path(path)
    f, extra = _open_write(path)
    try:
        f.write(f"# schema={DATASET_SCHEMA} features={cipg.FEATURE_SCHEMA} raw={cipg.RAW_SCHEMA} "
                f"horizon={ds.horizon} config_hash={config_hash}\n")
        f.write(",".join(ds.columns()) + "\n")
        for i in range(len(ds)):
            head = (ds.scenario[i], str(ds.iteration[i]), str(ds.step[i]), str(ds.labels[i]),
                    repr(float(ds.t_a[i])), repr(float(ds.t_m[i])))
            f.write(",".join(head) + "," + ",".join(map(repr, ds.features[i].tolist())) + ","
                    + ",".join(map(repr, ds.raw[i].tolist())) + "\n")
    finally:
        f.close()
        for h in extra:
            h.close()
    side = _sidecar(path)
    side.write_text(json.dumps({
        "schema": DATASET_SCHEMA,
        "feature_schema": cipg.FEATURE_SCHEMA,
        "raw_schema": cipg.RAW_SCHEMA,
        "config_hash": config_hash,
        "horizon": ds.horizon,
        "rows": len(ds),
        "sha256": file_sha256(path),
        "columns": ds.columns(),
        "channels": list(cipg.CHANNELS),
        "raw_channels": list(cipg.RAW_CHANNELS),
    }, indent=1) + "\n")
    return side


def read_dataset(path, verify: bool = True) -> Dataset:
    path = Path(path)
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else None
    if verify and meta is not None and meta.get("sha256") != file_sha256(path):
        raise DatasetError(f"{path}: checksum mismatch with {side.name}")
    with _open_read(path) as f:
        tag = f.readline()
        fields = dict(kv.split("=", 1) for kv in tag[1:].split() if "=" in kv)
        if fields.get("schema") != DATASET_SCHEMA or fields.get("features") != cipg.FEATURE_SCHEMA:
            raise DatasetError(f"{path}: unsupported dataset schema line {tag.strip()!r}")
        horizon = int(fields["horizon"])
        cols = f.readline().rstrip("\n").split(",")
        expect = Dataset.empty(horizon).columns()
        if cols != expect:
            raise DatasetError(f"{path}: column header does not match schema")
        recs = []
        nf = cipg.flat_length(horizon)
        for lineno, line in enumerate(f, start=3):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(expect):
                raise DatasetError(f"{path}:{lineno}: expected {len(expect)} fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts[4:]]
                recs.append({"scenario": parts[0], "iteration": int(parts[1]), "step": int(parts[2]),
                             "label": int(parts[3]), "t_a": vals[0], "t_m": vals[1],
                             "features": vals[2:2 + nf], "raw": vals[2 + nf:]})
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return Dataset.from_records(horizon, recs)
