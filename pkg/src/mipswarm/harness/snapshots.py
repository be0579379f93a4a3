"""CSV persistence of trajectories and metric tables."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..core import MetricsSeries, SwarmState

SNAPSHOT_COLUMNS = ("step", "time", "robot_id", "x", "y", "theta", "unwrapped_x", "unwrapped_y")
METRIC_COLUMNS = ("t", "v_hat", "agg_fraction", "msd")


class MalformedFile(ValueError):
    def __init__(self, path, line, message):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def write_snapshots(path, snapshots) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_COLUMNS)
        for s in snapshots:
            for i in range(s.n):
                w.writerow([s.step, fmt(s.time), i, fmt(s.x[i]), fmt(s.y[i]), fmt(s.theta[i]),
                            fmt(s.unwrapped[i, 0]), fmt(s.unwrapped[i, 1])])
    return path


def read_snapshots(path) -> list:
    path = Path(path)
    groups = OrderedDict()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedFile(path, 1, "empty file")
        missing = [c for c in SNAPSHOT_COLUMNS if c not in header]
        if missing:
            raise MalformedFile(path, 1, f"missing column(s): {', '.join(missing)}")
        col = {name: header.index(name) for name in SNAPSHOT_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedFile(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                step = int(row[col["step"]])
                rid = int(row[col["robot_id"]])
                vals = [float(row[col[c]]) for c in ("time", "x", "y", "theta", "unwrapped_x", "unwrapped_y")]
            except ValueError as exc:
                raise MalformedFile(path, lineno, str(exc)) from None
            g = groups.setdefault(step, {"time": vals[0], "rows": []})
            if vals[0] != g["time"]:
                raise MalformedFile(path, lineno, f"inconsistent time for step {step}")
            if rid != len(g["rows"]):
                raise MalformedFile(path, lineno, f"robot_id {rid} out of order for step {step}")
            g["rows"].append(vals[1:])
    out = []
    for step, g in groups.items():
        a = np.array(g["rows"], dtype=float).reshape(-1, 5)
        out.append(SwarmState(g["time"], a[:, 0], a[:, 1], a[:, 2], step=step, unwrapped=a[:, 3:5]))
    return out


def write_metrics(path, metrics: MetricsSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in zip(metrics.times, metrics.mean_speed, metrics.aggregation_fraction, metrics.msd):
            w.writerow([fmt(v) for v in row])
    return path


def read_metrics(path) -> MetricsSeries:
    path = Path(path)
    out = MetricsSeries()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in METRIC_COLUMNS):
            raise MalformedFile(path, 1, "missing metric columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(*(float(row[c]) for c in METRIC_COLUMNS))
            except (TypeError, ValueError) as exc:
                raise MalformedFile(path, lineno, str(exc)) from None
    return out


def write_table(path, rows, columns=None) -> Path:
    """Write a list of dicts as CSV; floats use round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else fmt(v)
    return v


def read_table(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
