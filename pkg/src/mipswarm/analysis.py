"""Observables computed from simulated swarm states."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal, stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .collisions import ContactGraph
from .core import DensityField, MetricsSeries, SwarmParams, SwarmState, minimum_image


class AnalysisError(ValueError):
    pass


class EmptySample(AnalysisError):
    pass


class TimeMismatch(AnalysisError):
    pass


class NonNegativeSlope(AnalysisError):
    pass


# -- coarse-grained density ----------------------------------------------------

def kernel_weight(d, cutoff: float):
    """Compactly supported bump ``exp(-dc^2 / (dc^2 - d^2))``, zero for ``d >= dc``."""
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    inside = np.abs(d) < cutoff
    c2 = cutoff * cutoff
    out[inside] = np.exp(-c2 / (c2 - d[inside] ** 2))
    return out if out.ndim else float(out)


def kernel_mass(cutoff: float) -> float:
    """Integral of :func:`kernel_weight` over the plane."""
    val, _ = integrate.quad(lambda s: 2.0 * math.pi * s * kernel_weight(s, cutoff), 0.0, cutoff,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def coarse_grain(state: SwarmState, params: SwarmParams, grid_size: int, cutoff: float) -> DensityField:
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    field = DensityField(grid_size, cutoff, np.zeros((grid_size, grid_size)),
                         params.domain_width, params.domain_height)
    gx, gy = field.lattice_points()
    lattice = np.column_stack([gx.ravel(), gy.ravel()])
    delta = lattice[:, None, :] - state.positions[None, :, :]
    if params.periodic:
        delta = minimum_image(delta, params.box)
    d = np.hypot(delta[..., 0], delta[..., 1])
    values = kernel_weight(d, cutoff).sum(axis=1).reshape(grid_size, grid_size)
    return DensityField(grid_size, cutoff, values, params.domain_width, params.domain_height)


# -- density distribution ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityHistogramKDE:
    sample_densities: np.ndarray
    evaluation_points: np.ndarray
    smoothed: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.smoothed, self.evaluation_points))


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if spread <= 0:
        spread = abs(float(np.mean(x))) or 1.0
    return 0.9 * spread * len(x) ** -0.2


def smooth_density_distribution(fields, bandwidth: float | None = None, eval_points: int = 512) -> DensityHistogramKDE:
    """Gaussian KDE of all lattice values pooled across ``fields``.

    Densities are non-negative, so the kernel is reflected at zero; this keeps
    unit mass on the evaluation range even when many lattice points are empty.
    """
    if isinstance(fields, DensityField):
        fields = [fields]
    parts = [np.ravel(f.values if isinstance(f, DensityField) else f) for f in fields]
    if not parts or sum(len(p) for p in parts) == 0:
        raise EmptySample("no density samples")
    x = np.concatenate(parts).astype(float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(0.0, x.max() + 3.0 * h, eval_points)
    norm = 1.0 / (len(x) * h * math.sqrt(2.0 * math.pi))
    pdf = np.zeros_like(grid)
    # chunk over samples to bound memory for large pools
    for start in range(0, len(x), 4096):
        xs = x[start:start + 4096]
        u = (grid[:, None] - xs[None, :]) / h
        v = (grid[:, None] + xs[None, :]) / h
        pdf += np.exp(-0.5 * u * u).sum(axis=1) + np.exp(-0.5 * v * v).sum(axis=1)
    return DensityHistogramKDE(x, grid, pdf * norm, h)


def count_modes(kde, prominence_fraction: float = 0.1) -> int:
    """Number of maxima whose prominence exceeds ``prominence_fraction * max``.

    Boundary maxima count; a plateau counts once.
    """
    if not 0 < prominence_fraction < 1:
        raise ValueError("prominence_fraction must lie in (0, 1)")
    y = np.asarray(kde.smoothed if isinstance(kde, DensityHistogramKDE) else kde, dtype=float)
    if y.size == 0:
        return 0
    pad = y.min()
    padded = np.concatenate([[pad], y, [pad]])
    peaks, _ = signal.find_peaks(padded, prominence=prominence_fraction * y.max())
    return max(1, len(peaks))


# -- clusters -------------------------------------------------------------------

def cluster_sizes(graph: ContactGraph) -> np.ndarray:
    """Size of the contact cluster each robot belongs to."""
    if graph.n == 0:
        return np.zeros(0, dtype=np.int64)
    e = graph.edges
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(graph.n, graph.n))
    _, labels = connected_components(adj, directed=False)
    return np.bincount(labels)[labels]


def aggregation_fraction(graph: ContactGraph, cutoff: int = 4) -> float:
    """Fraction of robots whose contact cluster has at least ``cutoff`` members."""
    if cutoff < 1:
        raise ValueError("cluster size cutoff must be >= 1")
    if graph.n == 0:
        return 0.0
    return float(np.count_nonzero(cluster_sizes(graph) >= cutoff)) / graph.n


# -- speeds and displacements -------------------------------------------------

def projected_speeds(prev: SwarmState, next: SwarmState, params: SwarmParams) -> np.ndarray:
    if not math.isclose(next.time - prev.time, params.dt, rel_tol=1e-9, abs_tol=1e-12):
        raise TimeMismatch(f"states are {next.time - prev.time} apart, expected dt={params.dt}")
    delta = next.positions - prev.positions
    if params.periodic:
        delta = minimum_image(delta, params.box)
    vel = delta / params.dt
    return vel[:, 0] * np.cos(prev.theta) + vel[:, 1] * np.sin(prev.theta)


def mean_projected_speed(prev: SwarmState, next: SwarmState, params: SwarmParams) -> float:
    return float(np.mean(projected_speeds(prev, next, params)))


def squared_displacement(state: SwarmState, origin: SwarmState) -> float:
    d = state.unwrapped - origin.unwrapped
    return float(np.mean(np.einsum("ij,ij->i", d, d)))


def mean_square_displacement(trajectory, params: SwarmParams | None = None) -> MetricsSeries:
    """MSD of each snapshot relative to the first, from unwrapped positions."""
    if len(trajectory) < 2:
        raise AnalysisError("need at least two snapshots")
    origin = trajectory[0]
    out = MetricsSeries()
    for s in trajectory:
        out.append(s.time - origin.time, math.nan, math.nan, squared_displacement(s, origin))
    return out


def diffusion_slope(times, msd, start_fraction: float = 0.0) -> float:
    """Least-squares slope of MSD against time, ignoring the first part of the series."""
    t = np.asarray(times, dtype=float)
    m = np.asarray(msd, dtype=float)
    keep = t >= t[0] + start_fraction * (t[-1] - t[0])
    return float(np.polyfit(t[keep], m[keep], 1)[0])


# -- speed/density fit --------------------------------------------------------

@dataclass(frozen=True)
class SpeedDensityFit:
    points: tuple
    v0_fit: float
    slope: float
    lambda_star_fit: float
    tau_m_fit: float
    tau_m_fit_free_v0: float
    r_squared: float
    stderr_slope: float = math.nan
    stderr_intercept: float = math.nan

    def predict(self, lam):
        return self.v0_fit + self.slope * np.asarray(lam, dtype=float)


def fit_speed_density(points, theory_in) -> SpeedDensityFit:
    """Ordinary least squares ``v = a + b*lam`` inverted for packing density and tau_m.

    ``tau_m_fit`` uses the configured speed ``theory_in.v0``; ``tau_m_fit_free_v0``
    uses the fitted intercept instead.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lam, v = pts[:, 0], pts[:, 1]
    if len(np.unique(lam)) < 2:
        raise AnalysisError("need at least two distinct densities")
    res = stats.linregress(lam, v)
    a, b = float(res.intercept), float(res.slope)
    if not b < 0:
        raise NonNegativeSlope(f"fitted slope {b} >= 0")
    lam_star = -a / b
    r = theory_in.r
    tau_m = math.pi / (16.0 * r * theory_in.v0 * lam_star)
    tau_m_free = math.pi / (16.0 * r * a * lam_star)
    r2 = float(res.rvalue) ** 2 if np.isfinite(res.rvalue) else 0.0
    return SpeedDensityFit(
        points=tuple(map(tuple, pts)), v0_fit=a, slope=b, lambda_star_fit=lam_star,
        tau_m_fit=tau_m, tau_m_fit_free_v0=tau_m_free, r_squared=min(max(r2, 0.0), 1.0),
        stderr_slope=float(getattr(res, "stderr", math.nan)),
        stderr_intercept=float(getattr(res, "intercept_stderr", math.nan)),
    )
