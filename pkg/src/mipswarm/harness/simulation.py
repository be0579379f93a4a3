"""Single-run orchestration: initial placement, the step loop and per-step metrics."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..analysis import aggregation_fraction, projected_speeds, squared_displacement
from ..collisions import (
    DEFAULT_CONTACT_TOLERANCE,
    build_grid,
    contact_graph_from_pairs,
    default_cell_size,
    find_pairs,
    overlap_displacements,
)
from ..core import MetricsSeries, SwarmParams, SwarmState, seeded_generator, validate_params
from ..integrator import StepInput, step

log = logging.getLogger(__name__)

_PLACEMENT_TAG = 0x504C414345
MAX_PLACEMENT_ATTEMPTS = 10_000
RELAXATION_STEPS = 100
# largest overlap (in radii) tolerated after relaxation
RELAXED_OVERLAP = 0.1


class InitializationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class AnalysisOptions:
    """Observable settings shared by runs and sweeps.

    Lengths are absolute; ``contact_tolerance=None`` means 0.05 radii and
    ``density_cutoff=None`` means one lattice spacing.
    """

    grid_size: int = 10
    density_cutoff: float | None = None
    cluster_cutoff: int = 4
    contact_tolerance: float | None = None
    bandwidth: float | None = None
    prominence_fraction: float = 0.1
    window_start: float = 0.0
    window_stop: float = math.inf
    tau_m: float | None = None

    def tolerance_for(self, params: SwarmParams) -> float:
        if self.contact_tolerance is None:
            return DEFAULT_CONTACT_TOLERANCE * params.radius
        return self.contact_tolerance

    def cutoff_for(self, params: SwarmParams) -> float:
        if self.density_cutoff is None:
            return max(params.domain_width, params.domain_height) / self.grid_size
        return self.density_cutoff

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if math.isinf(d["window_stop"]):
            d["window_stop"] = None
        return d

    @classmethod
    def from_dict(cls, data: dict | None) -> "AnalysisOptions":
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            from ..core import ConfigError
            raise ConfigError(f"unknown analysis keys: {', '.join(unknown)}")
        if data.get("window_stop") is None:
            data.pop("window_stop", None)
        return cls(**data)


@dataclass
class RunRecord:
    spec_hash: str
    params: SwarmParams
    metrics: MetricsSeries
    snapshots: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)

    @property
    def final_state(self) -> SwarmState:
        return self.snapshots[-1]

    def time_averaged(self, name: str) -> float:
        w = self.metrics.window(self.analysis.window_start, self.analysis.window_stop)
        vals = np.asarray(getattr(w, name), dtype=float)
        return float(np.mean(vals)) if len(vals) else math.nan


def config_hash(params: SwarmParams, analysis: AnalysisOptions | None = None, **extra) -> str:
    doc = {"params": params.to_dict(), "analysis": (analysis or AnalysisOptions()).to_dict(), **extra}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _relax(pos, params):
    """Force-only steps that push overlapping disks apart."""
    k = params.force_stiffness
    if k <= 0:
        return pos
    # pseudo time step with k*dt = 1/2: fastest separation without overshoot
    relax_params = params.replace(dt=0.5 / k)
    for _ in range(RELAXATION_STEPS):
        state = SwarmState(0.0, pos[:, 0], pos[:, 1], np.zeros(len(pos)))
        grid = build_grid(state, relax_params, cell_size=default_cell_size(params))
        pairs = find_pairs(state, grid, relax_params, 2.0 * params.radius)
        if len(pairs) == 0:
            break
        pos = pos + overlap_displacements(pairs, state, relax_params)
        if params.periodic:
            pos = np.mod(pos, params.box)
        else:
            r = params.radius
            pos = np.clip(pos, [r, r], [params.domain_width - r, params.domain_height - r])
    return pos


def _max_overlap(pos, params) -> float:
    state = SwarmState(0.0, pos[:, 0], pos[:, 1], np.zeros(len(pos)))
    grid = build_grid(state, params, cell_size=default_cell_size(params))
    pairs = find_pairs(state, grid, params, 2.0 * params.radius)
    if len(pairs) == 0:
        return 0.0
    return float(np.max(2.0 * params.radius - pairs.dist))


def initial_state(params: SwarmParams) -> SwarmState:
    """Uniform random placement with overlap rejection and uniform headings."""
    validate_params(params)
    rng = seeded_generator(params.seed, _PLACEMENT_TAG)
    n, r = params.n_robots, params.radius
    lo = np.zeros(2) if params.periodic else np.array([r, r])
    hi = params.box if params.periodic else params.box - r
    sigma2 = (2.0 * r) ** 2
    pos = np.empty((n, 2))
    placed = 0
    batch = 256
    while placed < n:
        found = None
        for start in range(0, MAX_PLACEMENT_ATTEMPTS, batch):
            cand = rng.uniform(lo, hi, size=(min(batch, MAX_PLACEMENT_ATTEMPTS - start), 2))
            if placed == 0:
                found = cand[0]
                break
            delta = cand[:, None, :] - pos[None, :placed, :]
            if params.periodic:
                delta -= params.box * np.floor(delta / params.box + 0.5)
            ok = np.flatnonzero(np.all(np.einsum("cpk,cpk->cp", delta, delta) >= sigma2, axis=1))
            if len(ok):
                found = cand[ok[0]]
                break
        if found is None:
            break
        pos[placed] = found
        placed += 1
    if placed < n:
        log.info("rejection sampling stopped at %d/%d robots; relaxing overlaps", placed, n)
        pos[placed:] = rng.uniform(lo, hi, size=(n - placed, 2))
        pos = _relax(pos, params)
        worst = _max_overlap(pos, params)
        if worst > RELAXED_OVERLAP * r:
            raise InitializationFailure(
                f"could not place {n} robots: overlap {worst:.3g} remains after relaxation"
            )
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return SwarmState(0.0, pos[:, 0], pos[:, 1], theta, step=0)


def run_simulation(
    params: SwarmParams,
    snapshot_every: int | None = None,
    analysis: AnalysisOptions | None = None,
    initial: SwarmState | None = None,
    progress=None,
) -> RunRecord:
    """Simulate ``params.n_steps`` steps and record metrics at every step.

    The metric row at time ``t_k`` holds the aggregation fraction and MSD of
    state ``k`` and the mean projected speed over the step ``k -> k+1``.
    Snapshots are kept every ``snapshot_every`` steps (always the first and
    last state; ``None`` keeps only those two).
    """
    validate_params(params)
    analysis = analysis or AnalysisOptions()
    tol = analysis.tolerance_for(params)
    reach = 2.0 * params.radius + tol
    cell = max(reach, default_cell_size(params))

    state = initial_state(params) if initial is None else initial
    origin = state
    metrics = MetricsSeries()
    snapshots = [state]
    for k in range(params.n_steps):
        grid = build_grid(state, params, cell_size=cell)
        pairs = find_pairs(state, grid, params, reach)
        disp = overlap_displacements(pairs, state, params)
        nxt = step(StepInput(state, disp, params, k))
        graph = contact_graph_from_pairs(pairs, state.n, params, tol)
        metrics.append(
            state.time,
            float(np.mean(projected_speeds(state, nxt, params))),
            aggregation_fraction(graph, analysis.cluster_cutoff),
            squared_displacement(state, origin),
        )
        state = nxt
        if snapshot_every and (k + 1) % snapshot_every == 0:
            snapshots.append(state)
        if progress is not None:
            progress(k + 1)
    if snapshots[-1] is not state:
        snapshots.append(state)
    spec_hash = config_hash(params, analysis, snapshot_every=snapshot_every)
    return RunRecord(spec_hash, params, metrics, snapshots, {}, analysis)
