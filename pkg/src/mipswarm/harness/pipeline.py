"""Post-hoc analysis of stored snapshots and the theory summary report."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import theory as th
from ..analysis import (
    aggregation_fraction,
    coarse_grain,
    count_modes,
    mean_square_displacement,
    smooth_density_distribution,
)
from ..collisions import build_contact_graph
from ..core import SwarmParams
from .simulation import AnalysisOptions


def in_window(snapshots, options: AnalysisOptions) -> list:
    return [s for s in snapshots if options.window_start <= s.time <= options.window_stop]


@dataclass
class SnapshotAnalysis:
    fields: list            # (time, DensityField) for snapshots in the window
    kde: object             # DensityHistogramKDE or None
    modes: int | None
    aggregation: list       # (time, fraction) for every snapshot
    msd: object             # MetricsSeries or None

    def tables(self) -> dict:
        out = {
            "density_fields": [
                {"t": t, "lattice_x": x, "lattice_y": y, "lambda": v}
                for t, f in self.fields
                for x, y, v in zip(*(a.ravel() for a in f.lattice_points()), f.values.ravel())
            ],
            "aggregation": [{"t": t, "agg_fraction": a} for t, a in self.aggregation],
        }
        if self.kde is not None:
            out["kde"] = [{"lambda": x, "pdf": y}
                          for x, y in zip(self.kde.evaluation_points, self.kde.smoothed)]
        if self.msd is not None:
            out["msd"] = [{"t": t, "msd": m} for t, m in zip(self.msd.times, self.msd.msd)]
        return out


def analyze_snapshots(snapshots, params: SwarmParams, options: AnalysisOptions | None = None) -> SnapshotAnalysis:
    """Density fields, pooled KDE and mode count over the averaging window, plus
    per-snapshot aggregation and the MSD series.

    Used both on in-memory runs and on snapshots read back from disk, so the
    two paths produce identical numbers.
    """
    options = options or AnalysisOptions()
    cutoff = options.cutoff_for(params)
    tol = options.tolerance_for(params)
    fields = [(s.time, coarse_grain(s, params, options.grid_size, cutoff)) for s in in_window(snapshots, options)]
    kde = modes = None
    if fields:
        kde = smooth_density_distribution([f for _, f in fields], bandwidth=options.bandwidth)
        modes = count_modes(kde, options.prominence_fraction)
    agg = [(s.time, aggregation_fraction(build_contact_graph(s, params, tol), options.cluster_cutoff))
           for s in snapshots]
    msd = mean_square_displacement(snapshots, params) if len(snapshots) >= 2 else None
    return SnapshotAnalysis(fields, kde, modes, agg, msd)


# -- theory report -------------------------------------------------------------

@dataclass(frozen=True)
class TheoryReport:
    inputs: th.TheoryInputs
    effective_diffusion: float
    activity: float
    lambda_star: float
    phase_separation: bool
    lambda_minus: float | None
    lambda_plus: float | None
    density_range: tuple | None
    mean_density: float | None = None

    @property
    def verdict(self) -> str:
        return "phase separation possible" if self.phase_separation else "phase separation impossible"

    @property
    def mean_density_inside(self) -> bool | None:
        if self.mean_density is None:
            return None
        if self.density_range is None:
            return False
        lo, hi = self.density_range
        return lo <= self.mean_density <= hi

    def to_dict(self) -> dict:
        lo, hi = self.density_range or (math.nan, math.nan)
        nan = lambda v: math.nan if v is None else v
        return {
            "v0": self.inputs.v0, "Dt": self.inputs.Dt, "Dr": self.inputs.Dr,
            "r": self.inputs.r, "tau_m": self.inputs.tau_m,
            "effective_diffusion": self.effective_diffusion,
            "activity": self.activity,
            "lambda_star": self.lambda_star,
            "verdict": self.verdict,
            "lambda_minus": nan(self.lambda_minus),
            "lambda_plus": nan(self.lambda_plus),
            "range_low": lo, "range_high": hi,
            "mean_density": nan(self.mean_density),
            "mean_density_inside": "" if self.mean_density is None else self.mean_density_inside,
        }

    def format(self) -> str:
        lines = [
            f"effective diffusion D   = {self.effective_diffusion:.10g}",
            f"activity A              = {self.activity:.10g}",
            f"packing density lambda* = {self.lambda_star:.10g}",
            f"verdict                 : {self.verdict}",
        ]
        if self.phase_separation:
            lo, hi = self.density_range
            lines += [
                f"spinodal lambda-        = {self.lambda_minus:.10g}",
                f"spinodal lambda+        = {self.lambda_plus:.10g}",
                f"unstable density range  = [{lo:.10g}, {hi:.10g}]",
            ]
        if self.mean_density is not None:
            where = "inside" if self.mean_density_inside else "outside"
            lines.append(f"mean density {self.mean_density:.6g} is {where} the range")
        return "\n".join(lines)


def theory_report(inputs: th.TheoryInputs, mean_density: float | None = None) -> TheoryReport:
    sp = th.spinodal_densities(inputs)
    return TheoryReport(
        inputs=inputs,
        effective_diffusion=th.effective_diffusion(inputs),
        activity=th.activity(inputs),
        lambda_star=sp.lambda_star,
        phase_separation=sp.exists,
        lambda_minus=sp.lambda_minus,
        lambda_plus=sp.lambda_plus,
        density_range=sp.density_range,
        mean_density=mean_density,
    )
