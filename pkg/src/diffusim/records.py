"""Run records and their on-disk formats.

A RunRecord captures one filter run completely enough to replay it: the
config snapshot and stream path that produced it, per-step summaries, the
final metrics, and (optionally) full ensemble dumps.  Persistence favors
boring, auditable formats: JSON with sorted keys, CSV with full-precision
floats, and a tiny binary container for ensembles.

Ensemble dump format (little-endian): a 32-byte header — 8-byte magic
``DSIMENS1``, uint32 version (=1), uint32 reserved (=0), uint64 member count
N, uint64 dimension d — followed by N*d float64 values, row-major.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

__all__ = [
    "StepRecord",
    "RunRecord",
    "write_ensemble",
    "read_ensemble",
    "write_run_record",
    "load_run_summary",
    "load_steps_csv",
    "dump_json",
]

ENSEMBLE_MAGIC = b"DSIMENS1"
ENSEMBLE_VERSION = 1
_HEADER = struct.Struct("<8sIIQQ")
assert _HEADER.size == 32


@dataclass
class StepRecord:
    """Summary of one assimilation step (k counts prediction steps applied)."""

    k: int
    observation: np.ndarray
    pred_mean: np.ndarray
    pred_std: np.ndarray
    post_mean: np.ndarray
    post_std: np.ndarray
    step_count: int = 0  # accepted reverse-ODE steps; 0 for non-diffusion filters


@dataclass
class RunRecord:
    """Everything needed to evaluate and replay one (filter, N, simulation) run."""

    filter_kind: str
    n: int
    sim_index: int
    seed: int
    stream_path: tuple
    config_snapshot: dict
    steps: List[StepRecord] = field(default_factory=list)
    posteriors: List[np.ndarray] = field(default_factory=list)
    predictions: List[np.ndarray] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    failed: bool = False
    failure: Optional[str] = None

    @property
    def label(self) -> str:
        return f"{self.filter_kind}_n{self.n}_s{self.sim_index}"

    def step_count_range(self) -> Optional[tuple]:
        counts = [s.step_count for s in self.steps if s.step_count > 0]
        if not counts:
            return None
        return (int(min(counts)), int(max(counts)))


def write_ensemble(path, members: np.ndarray) -> None:
    """Write one ensemble in the binary container format."""
    members = np.ascontiguousarray(members, dtype="<f8")
    if members.ndim != 2:
        raise ValueError(f"expected an (N, d) matrix, got shape {members.shape}")
    n, d = members.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, 0, n, d))
        fh.write(members.tobytes())


def read_ensemble(path) -> np.ndarray:
    """Read an ensemble written by :func:`write_ensemble`."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, _, n, d = _HEADER.unpack(header)
        if magic != ENSEMBLE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != ENSEMBLE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * d:
        raise ValueError(f"{path}: expected {n * d} values, found {data.size}")
    return data.reshape(n, d).astype(float)


def dump_json(obj, path) -> None:
    """Deterministic JSON: sorted keys, trailing newline, full float precision."""
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _float_cell(v: float) -> str:
    return repr(float(v))


def _vector_header(prefix: str, dim: int) -> List[str]:
    return [f"{prefix}_{i}" for i in range(dim)]


def write_run_record(run_dir, record: RunRecord, store_ensembles: bool = False) -> Path:
    """Persist one record under ``run_dir/<label>``; returns the directory."""
    out = Path(run_dir) / record.label
    out.mkdir(parents=True, exist_ok=True)

    summary = {
        "filter": record.filter_kind,
        "n": record.n,
        "sim_index": record.sim_index,
        "seed": record.seed,
        "stream_path": list(record.stream_path),
        "metrics": record.metrics,
        "runtime_seconds": record.runtime_seconds,
        "failed": record.failed,
        "failure": record.failure,
        "steps_completed": len(record.steps),
        "step_count_range": record.step_count_range(),
        "config": record.config_snapshot,
    }
    dump_json(summary, out / "summary.json")

    if record.steps:
        obs_dim = record.steps[0].observation.size
        d = record.steps[0].post_mean.size
        header = (
            ["k"]
            + _vector_header("obs", obs_dim)
            + _vector_header("pred_mean", d)
            + _vector_header("pred_std", d)
            + _vector_header("post_mean", d)
            + _vector_header("post_std", d)
            + ["step_count"]
        )
        with open(out / "steps.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for s in record.steps:
                row = (
                    [str(s.k)]
                    + [_float_cell(v) for v in s.observation]
                    + [_float_cell(v) for v in s.pred_mean]
                    + [_float_cell(v) for v in s.pred_std]
                    + [_float_cell(v) for v in s.post_mean]
                    + [_float_cell(v) for v in s.post_std]
                    + [str(s.step_count)]
                )
                writer.writerow(row)

    if store_ensembles:
        for arrs, tag in ((record.predictions, "pred"), (record.posteriors, "post")):
            for k, members in enumerate(arrs, start=1):
                write_ensemble(out / f"{tag}_k{k:04d}.bin", members)
    return out


def load_run_summary(record_dir) -> dict:
    with open(Path(record_dir) / "summary.json") as fh:
        return json.load(fh)


def load_steps_csv(record_dir) -> dict:
    """Columns of steps.csv as arrays keyed by column-group prefix."""
    path = Path(record_dir) / "steps.csv"
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader]
    data = np.asarray(rows) if rows else np.empty((0, len(header)))
    groups: dict = {}
    for idx, name in enumerate(header):
        prefix = name.rsplit("_", 1)[0] if "_" in name and name.split("_")[-1].isdigit() else name
        groups.setdefault(prefix, []).append(idx)
    return {prefix: data[:, cols] if len(cols) > 1 else data[:, cols[0]]
            for prefix, cols in groups.items()}
