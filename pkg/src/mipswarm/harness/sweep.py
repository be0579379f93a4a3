"""Parameter sweeps: Cartesian products of settings, replicated over seeds."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analysis import count_modes, fit_speed_density, smooth_density_distribution
from ..core import ConfigError, SwarmParams
from ..theory import TheoryInputs, spinodal_densities
from . import snapshots as sio
from .pipeline import analyze_snapshots
from .simulation import AnalysisOptions, config_hash, run_simulation

log = logging.getLogger(__name__)

# axes that are not stored fields but set other fields
DERIVED_AXES = ("mean_density", "activity")
SCALAR_OBSERVABLES = ("v_hat", "agg_fraction", "msd_final")
DENSITY_OBSERVABLES = ("modes",)
KNOWN_OBSERVABLES = SCALAR_OBSERVABLES + DENSITY_OBSERVABLES


@dataclass(frozen=True)
class ExperimentSpec:
    """A named sweep.

    ``sweep_axes`` is a sequence of ``(name, values)``; names are
    :class:`SwarmParams` fields, :class:`AnalysisOptions` fields, or the
    derived axes ``mean_density`` (sets the domain for fixed ``n_robots``)
    and ``activity`` (sets ``diff_rot``).  Replicate ``k`` uses seed
    ``base.seed + k``.
    """

    name: str
    base: SwarmParams
    sweep_axes: tuple = ()
    replicates: int = 1
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    observables: tuple = SCALAR_OBSERVABLES
    snapshot_every: int | None = None
    fit: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "sweep_axes", tuple((str(n), tuple(v)) for n, v in self.sweep_axes))
        object.__setattr__(self, "observables", tuple(self.observables))
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        allowed = set(SwarmParams.__dataclass_fields__) | set(AnalysisOptions.__dataclass_fields__) | set(DERIVED_AXES)
        for name, values in self.sweep_axes:
            if name not in allowed:
                raise ConfigError(f"unknown sweep axis {name!r}")
            if not values:
                raise ConfigError(f"sweep axis {name!r} has no values")
        unknown = sorted(set(self.observables) - set(KNOWN_OBSERVABLES))
        if unknown:
            raise ConfigError(f"unknown observables: {', '.join(unknown)}")
        if "modes" in self.observables and not self.snapshot_every:
            raise ConfigError("the 'modes' observable needs snapshot_every")
        if self.fit is not None:
            extra = sorted(set(self.fit) - {"tau_m", "max_density"})
            if extra:
                raise ConfigError(f"unknown fit keys: {', '.join(extra)}")
            if "mean_density" not in self.axis_names:
                raise ConfigError("a speed/density fit needs a mean_density axis")

    @property
    def axis_names(self) -> tuple:
        return tuple(n for n, _ in self.sweep_axes)

    def points(self) -> list:
        """Every combination of axis values, in row-major order."""
        values = [v for _, v in self.sweep_axes]
        return [dict(zip(self.axis_names, combo)) for combo in itertools.product(*values)]

    def resolve(self, point: dict, replicate: int) -> tuple:
        pfields = set(SwarmParams.__dataclass_fields__)
        p_changes = {k: v for k, v in point.items() if k in pfields}
        a_changes = {k: v for k, v in point.items() if k in AnalysisOptions.__dataclass_fields__}
        params = self.base.replace(**p_changes)
        if "mean_density" in point:
            aspect = params.domain_width / params.domain_height
            fields = params.to_dict()
            fields.pop("domain_width"), fields.pop("domain_height")
            params = SwarmParams.for_density(float(point["mean_density"]), aspect=aspect, **fields)
        if "activity" in point:
            params = params.replace(diff_rot=params.speed / (2.0 * params.radius * float(point["activity"])))
        params = params.replace(seed=self.base.seed + replicate)
        analysis = AnalysisOptions(**{**self.analysis.__dict__, **a_changes})
        return params, analysis

    def cells(self) -> list:
        return [SweepCell(i, k, pt, *self.resolve(pt, k), self.snapshot_every, self.observables)
                for i, pt in enumerate(self.points()) for k in range(self.replicates)]

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base": self.base.to_dict(),
            "sweep": {n: list(v) for n, v in self.sweep_axes},
            "replicates": self.replicates,
            "analysis": self.analysis.to_dict(),
            "observables": list(self.observables),
            "snapshot_every": self.snapshot_every,
            "fit": self.fit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        if not isinstance(data, dict):
            raise ConfigError("experiment spec must be a JSON object")
        known = {"name", "base", "sweep", "replicates", "analysis", "observables", "snapshot_every", "fit"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {', '.join(unknown)}")
        if "name" not in data:
            raise ConfigError("experiment spec needs a name")
        sweep = data.get("sweep", {})
        if not isinstance(sweep, dict):
            raise ConfigError("'sweep' must map axis names to value lists")
        try:
            return cls(
                name=str(data["name"]),
                base=SwarmParams.from_dict(data.get("base", {})),
                sweep_axes=tuple((k, v if isinstance(v, list) else [v]) for k, v in sweep.items()),
                replicates=int(data.get("replicates", 1)),
                analysis=AnalysisOptions.from_dict(data.get("analysis")),
                observables=tuple(data.get("observables", SCALAR_OBSERVABLES)),
                snapshot_every=data.get("snapshot_every"),
                fit=data.get("fit"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class SweepCell:
    point_index: int
    replicate: int
    point: dict
    params: SwarmParams
    analysis: AnalysisOptions
    snapshot_every: int | None
    observables: tuple

    @property
    def spec_hash(self) -> str:
        return config_hash(self.params, self.analysis, snapshot_every=self.snapshot_every)


@dataclass
class CellResult:
    cell: SweepCell
    status: str                    # "ok" or "failed"
    summary: dict = field(default_factory=dict)
    error: str = ""
    record: object = None          # RunRecord, only for freshly computed cells
    fields: list = field(default_factory=list)


@dataclass
class SweepResult:
    spec: ExperimentSpec
    cells: list
    table: list
    fit: dict | None = None
    kdes: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.status != "ok"]

    @property
    def records(self) -> list:
        return [c.record for c in self.cells if c.record is not None]


def _summarise(record, snaps_analysis) -> dict:
    out = {
        "v_hat": record.time_averaged("mean_speed"),
        "agg_fraction": record.time_averaged("aggregation_fraction"),
        "msd_final": float(record.metrics.msd[-1]) if len(record.metrics) else 0.0,
    }
    if snaps_analysis is not None:
        out["modes"] = snaps_analysis.modes
    return out


def _cell_dir(out_dir, cell) -> Path | None:
    return None if out_dir is None else Path(out_dir) / "cells" / cell.spec_hash


def _run_cell(cell: SweepCell, out_dir=None, keep_record=True) -> CellResult:
    try:
        rec = run_simulation(cell.params, snapshot_every=cell.snapshot_every, analysis=cell.analysis)
        sa = None
        if "modes" in cell.observables:
            sa = analyze_snapshots(rec.snapshots, cell.params, cell.analysis)
        summary = _summarise(rec, sa)
        d = _cell_dir(out_dir, cell)
        if d is not None:
            sio.write_metrics(d / "metrics.csv", rec.metrics)
            if cell.snapshot_every:
                sio.write_snapshots(d / "snapshots.csv", rec.snapshots)
            doc = {"spec_hash": cell.spec_hash, "params": cell.params.to_dict(),
                   "analysis": cell.analysis.to_dict(), "snapshot_every": cell.snapshot_every,
                   "summary": summary}
            (d / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        fields = [f for _, f in sa.fields] if sa is not None else []
        return CellResult(cell, "ok", summary, record=rec if keep_record else None, fields=fields)
    except Exception as exc:  # tagged, never fatal for the sweep
        log.warning("cell %d/rep %d failed: %s", cell.point_index, cell.replicate, exc)
        return CellResult(cell, "failed", error=f"{type(exc).__name__}: {exc}")


def _resume_cell(cell: SweepCell, out_dir) -> CellResult | None:
    d = _cell_dir(out_dir, cell)
    path = d / "summary.json"
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("spec_hash") != cell.spec_hash:
            return None
        fields = []
        if "modes" in cell.observables:
            snaps = sio.read_snapshots(d / "snapshots.csv")
            fields = [f for _, f in analyze_snapshots(snaps, cell.params, cell.analysis).fields]
        return CellResult(cell, "ok", doc["summary"], fields=fields)
    except (OSError, ValueError, KeyError) as exc:
        log.warning("ignoring unreadable cell %s: %s", d, exc)
        return None


def _worker(args):
    cell, out_dir = args
    # records stay in the worker process; only the summary and fields travel back
    return _run_cell(cell, out_dir, keep_record=False)


def _mean_sem(values) -> tuple:
    vals = sorted(float(v) for v in values)
    n = len(vals)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(spec: ExperimentSpec, results) -> tuple:
    """Per-point means and standard errors; pooled KDEs for density observables.

    Replicates are combined in seed order with compensated sums, so the table
    does not depend on the order results arrive in.
    """
    by_point = {}
    for r in results:
        by_point.setdefault(r.cell.point_index, []).append(r)
    rows, kdes = [], {}
    for i, point in enumerate(spec.points()):
        group = sorted(by_point.get(i, []), key=lambda r: r.cell.replicate)
        ok = [r for r in group if r.status == "ok"]
        row = {"point": i, **point, "n_ok": len(ok), "n_failed": len(group) - len(ok)}
        for name in spec.observables:
            if name in SCALAR_OBSERVABLES:
                row[f"{name}_mean"], row[f"{name}_sem"] = _mean_sem(r.summary[name] for r in ok)
        if "modes" in spec.observables:
            fields = [f for r in ok for f in r.fields]
            if fields:
                kde = smooth_density_distribution(fields, bandwidth=ok[0].cell.analysis.bandwidth)
                kdes[i] = kde
                row["modes"] = count_modes(kde, ok[0].cell.analysis.prominence_fraction)
                row["bandwidth"] = kde.bandwidth
            else:
                row["modes"] = ""
        rows.append(row)
    return rows, kdes


def fit_report(spec: ExperimentSpec, rows) -> dict:
    """Speed/density fit over the ``mean_density`` axis, inverted for tau_m."""
    cfg = spec.fit or {}
    max_density = cfg.get("max_density", math.inf)
    pts = [(row["mean_density"], row["v_hat_mean"]) for row in rows
           if row["mean_density"] <= max_density and row["n_ok"] > 0]
    base = spec.base
    guess = TheoryInputs(base.speed, base.diff_trans, base.diff_rot, base.radius, cfg.get("tau_m", 1.0))
    fit = fit_speed_density(pts, guess)
    fitted = TheoryInputs(base.speed, base.diff_trans, base.diff_rot, base.radius, fit.tau_m_fit)
    sp = spinodal_densities(fitted)
    lo, hi = sp.density_range if sp.exists else (math.nan, math.nan)
    return {
        "n_points": len(pts),
        "v0_fit": fit.v0_fit,
        "slope": fit.slope,
        "lambda_star_fit": fit.lambda_star_fit,
        "tau_m_fit": fit.tau_m_fit,
        "tau_m_fit_free_v0": fit.tau_m_fit_free_v0,
        "r_squared": fit.r_squared,
        "range_low": lo,
        "range_high": hi,
    }


def run_sweep(spec: ExperimentSpec, out_dir=None, workers: int = 1, resume: bool = False,
              progress=None) -> SweepResult:
    """Run every (point, replicate) cell and aggregate.

    With ``out_dir`` each cell writes ``cells/<hash>/`` (metrics, optional
    snapshots, summary) and the sweep writes ``<name>.csv`` (aggregated),
    ``<name>_runs.csv`` (one row per cell, failures tagged), pooled KDE curves
    and, when configured, ``<name>_fit.csv``.  ``resume`` reuses cells whose
    summary already exists under the same hash.  Results do not depend on
    ``workers``.
    """
    cells = spec.cells()
    results = [None] * len(cells)
    todo = []
    for idx, cell in enumerate(cells):
        cached = _resume_cell(cell, out_dir) if (resume and out_dir is not None) else None
        if cached is not None:
            results[idx] = cached
        else:
            todo.append(idx)
    if todo:
        log.info("%s: running %d cell(s), %d reused", spec.name, len(todo), len(cells) - len(todo))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, res in zip(todo, pool.map(_worker, [(cells[i], out_dir) for i in todo])):
                results[idx] = res
                if progress:
                    progress(res)
    else:
        for idx in todo:
            results[idx] = _run_cell(cells[idx], out_dir)
            if progress:
                progress(results[idx])

    rows, kdes = aggregate(spec, results)
    fit = None
    if spec.fit is not None:
        try:
            fit = fit_report(spec, rows)
        except Exception as exc:
            log.warning("speed/density fit failed: %s", exc)
            fit = {"error": f"{type(exc).__name__}: {exc}"}
    result = SweepResult(spec, results, rows, fit, kdes)
    if out_dir is not None:
        write_sweep_outputs(result, out_dir)
    return result


def write_sweep_outputs(result: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.spec.name
    sio.write_table(out / f"{name}.csv", result.table)
    runs = []
    for r in result.cells:
        c = r.cell
        runs.append({"point": c.point_index, "replicate": c.replicate, **c.point, "seed": c.params.seed,
                     "spec_hash": c.spec_hash, "status": r.status, **r.summary, "error": r.error})
    sio.write_table(out / f"{name}_runs.csv", runs)
    for i, kde in result.kdes.items():
        sio.write_table(out / f"{name}_kde_{i}.csv",
                        [{"lambda": x, "pdf": y} for x, y in zip(kde.evaluation_points, kde.smoothed)])
    if result.fit is not None:
        sio.write_table(out / f"{name}_fit.csv", [result.fit])
    manifest = {"experiment": result.spec.to_dict(),
                "cells": [{"point": r.cell.point_index, "replicate": r.cell.replicate,
                           "spec_hash": r.cell.spec_hash, "status": r.status} for r in result.cells]}
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default),
                                              encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    return repr(o)
