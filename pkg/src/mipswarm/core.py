"""Shared domain types, parameter validation and the counter-based noise source."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

BOUNDARY_MODES = ("periodic", "reflecting")

_MASK64 = (1 << 64) - 1
# Second Philox key word; keeps the dynamics stream disjoint from other
# seeded streams in the package (initial placement uses a different tag).
_NOISE_TAG = 0x4E4F495345
CHANNELS = {"x": 0, "y": 1, "theta": 2, "contact": 3}
_N_CHANNELS = len(CHANNELS)


class ParamError(ValueError):
    """Raised when a :class:`SwarmParams` violates one or more constraints.

    ``violations`` is a list of ``(kind, field, message)`` triples where
    ``kind`` is one of ``OverPacked``, ``NonPositive``, ``DegenerateDomain``
    or ``BadValue``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{kind}({name}): {text}" for kind, name, text in self.violations)
        super().__init__(msg)

    @property
    def kinds(self):
        return {v[0] for v in self.violations}


class ConfigError(ValueError):
    """Unreadable or inconsistent configuration document."""


@dataclass(frozen=True)
class SwarmParams:
    n_robots: int = 292
    radius: float = 1.0
    speed: float = 4.0
    diff_trans: float = 1e-5
    diff_rot: float = 1e-4
    domain_width: float = 40.0
    domain_height: float = 40.0
    dt: float = 0.01
    seed: int = 0
    force_stiffness: float = 50.0
    boundary_mode: str = "periodic"
    n_steps: int = 1000

    @property
    def area(self) -> float:
        return self.domain_width * self.domain_height

    @property
    def mean_density(self) -> float:
        return self.n_robots / self.area

    @property
    def packing_fraction(self) -> float:
        return self.n_robots * math.pi * self.radius**2 / self.area

    @property
    def periodic(self) -> bool:
        return self.boundary_mode == "periodic"

    @property
    def box(self) -> np.ndarray:
        return np.array([self.domain_width, self.domain_height])

    def replace(self, **changes) -> "SwarmParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SwarmParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown SwarmParams keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SwarmParams":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    @classmethod
    def for_density(cls, mean_density: float, aspect: float = 1.0, **kwargs) -> "SwarmParams":
        """Build params whose domain area gives ``n_robots / area == mean_density``."""
        n = kwargs.get("n_robots", cls.n_robots)
        area = n / mean_density
        height = math.sqrt(area / aspect)
        return cls(domain_width=aspect * height, domain_height=height, **kwargs)


def check_params(p: SwarmParams) -> list:
    """Return the list of violated constraints (empty when ``p`` is valid)."""
    out = []

    def bad(kind, name, text):
        out.append((kind, name, text))

    if not isinstance(p.n_robots, (int, np.integer)) or isinstance(p.n_robots, bool):
        bad("BadValue", "n_robots", "must be an integer")
    elif p.n_robots < 1:
        bad("NonPositive", "n_robots", f"{p.n_robots} < 1")
    if not isinstance(p.n_steps, (int, np.integer)) or p.n_steps < 0:
        bad("BadValue", "n_steps", f"{p.n_steps!r} is not a non-negative integer")
    if not isinstance(p.seed, (int, np.integer)) or not 0 <= p.seed <= _MASK64:
        bad("BadValue", "seed", f"{p.seed!r} is not an unsigned 64-bit integer")
    for name in ("radius", "diff_rot", "dt", "domain_width", "domain_height"):
        if not getattr(p, name) > 0:
            bad("NonPositive", name, f"{getattr(p, name)} <= 0")
    for name in ("speed", "diff_trans", "force_stiffness"):
        if not getattr(p, name) >= 0:
            bad("NonPositive", name, f"{getattr(p, name)} < 0")
    if p.boundary_mode not in BOUNDARY_MODES:
        bad("BadValue", "boundary_mode", f"{p.boundary_mode!r} not in {BOUNDARY_MODES}")
    if p.radius > 0:
        for name in ("domain_width", "domain_height"):
            if 0 < getattr(p, name) <= 2 * p.radius:
                bad("DegenerateDomain", name, f"{getattr(p, name)} <= 2*radius")
        if p.domain_width > 0 and p.domain_height > 0 and isinstance(p.n_robots, (int, np.integer)):
            if p.n_robots * math.pi * p.radius**2 >= p.area:
                bad("OverPacked", "n_robots",
                    f"disk area {p.n_robots * math.pi * p.radius**2:.4g} >= domain area {p.area:.4g}")
    return out


def validate_params(p: SwarmParams) -> SwarmParams:
    """Return ``p`` unchanged, or raise :class:`ParamError` listing every violation."""
    violations = check_params(p)
    if violations:
        raise ParamError(violations)
    return p


class RobotPose(NamedTuple):
    x: float
    y: float
    theta: float


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SwarmState:
    """Positions and headings of all robots at one instant.

    Arrays are stored read-only.  ``unwrapped`` holds positions that have
    accumulated every raw displacement without periodic reduction; it is
    what mean-square displacement is computed from.
    """

    time: float
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    step: int = 0
    unwrapped: np.ndarray | None = None

    def __post_init__(self):
        x = _frozen(self.x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", _frozen(self.y))
        object.__setattr__(self, "theta", _frozen(self.theta))
        if not (x.shape == self.y.shape == self.theta.shape) or x.ndim != 1:
            raise ValueError("x, y and theta must be 1-d arrays of equal length")
        if self.unwrapped is None:
            unwrapped = np.column_stack([x, self.y])
        else:
            unwrapped = self.unwrapped
        unwrapped = _frozen(unwrapped)
        if unwrapped.shape != (len(x), 2):
            raise ValueError("unwrapped must have shape (N, 2)")
        object.__setattr__(self, "unwrapped", unwrapped)

    @classmethod
    def from_poses(cls, poses: Iterable, time: float = 0.0, step: int = 0, unwrapped=None):
        arr = np.array([tuple(p) for p in poses], dtype=float).reshape(-1, 3)
        return cls(time, arr[:, 0], arr[:, 1], arr[:, 2], step=step, unwrapped=unwrapped)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def poses(self) -> list:
        return [RobotPose(float(a), float(b), float(c)) for a, b, c in zip(self.x, self.y, self.theta)]

    def __eq__(self, other):
        if not isinstance(other, SwarmState):
            return NotImplemented
        return (
            self.time == other.time
            and self.step == other.step
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.unwrapped, other.unwrapped)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DensityField:
    grid_size: int
    cutoff: float
    values: np.ndarray
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def cell_area(self) -> float:
        return self.width * self.height / self.grid_size**2

    def lattice_points(self):
        """Cell-centre coordinates, each of shape (l, l), indexed [ix, iy]."""
        l = self.grid_size
        xs = (np.arange(l) + 0.5) * self.width / l
        ys = (np.arange(l) + 0.5) * self.height / l
        return np.meshgrid(xs, ys, indexing="ij")


@dataclass
class MetricsSeries:
    times: list = field(default_factory=list)
    mean_speed: list = field(default_factory=list)
    aggregation_fraction: list = field(default_factory=list)
    msd: list = field(default_factory=list)

    def append(self, t, v_hat, agg, msd):
        self.times.append(float(t))
        self.mean_speed.append(float(v_hat))
        self.aggregation_fraction.append(float(agg))
        self.msd.append(float(msd))

    def __len__(self):
        return len(self.times)

    def as_arrays(self) -> dict:
        return {k: np.asarray(v, dtype=float) for k, v in dataclasses.asdict(self).items()}

    def window(self, start: float = 0.0, stop: float = math.inf) -> "MetricsSeries":
        """Sub-series with ``start <= t < stop``."""
        keep = [i for i, t in enumerate(self.times) if start <= t < stop]
        return MetricsSeries(*[[getattr(self, f.name)[i] for i in keep] for f in dataclasses.fields(self)])


# -- counter-based noise ------------------------------------------------------

def _uniform_pairs(seed: int, step: int, n_values: int) -> np.ndarray:
    """First ``n_values`` uniform pairs of the Philox stream keyed by ``(seed, step)``.

    Values lie in (0, 1]; the stream for a given ``(seed, step)`` is fixed, so the
    k-th pair is a pure function of ``(seed, step, k)``.
    """
    bg = np.random.Philox(key=[int(seed) & _MASK64, _NOISE_TAG], counter=[0, int(step), 0, 0])
    raw = bg.random_raw(2 * n_values)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    return u.reshape(n_values, 2)


def _box_muller(u: np.ndarray) -> np.ndarray:
    return np.sqrt(-2.0 * np.log(u[..., 0])) * np.cos(2.0 * np.pi * u[..., 1])


def noise_block(seed: int, step: int, n_robots: int) -> np.ndarray:
    """Standard normal deviates for every (robot, channel) at one step.

    Returns an ``(n_robots, 4)`` array with columns ordered as in
    :data:`CHANNELS`.  Entry ``[i, c]`` equals ``noise_stream(seed, i, step, c)``
    irrespective of ``n_robots``.
    """
    u = _uniform_pairs(seed, step, n_robots * _N_CHANNELS)
    return _box_muller(u).reshape(n_robots, _N_CHANNELS)


def noise_stream(seed: int, robot_id: int, step: int, channel) -> float:
    """Standard normal deviate addressed by ``(seed, robot_id, step, channel)``."""
    c = CHANNELS[channel] if isinstance(channel, str) else int(channel)
    if not 0 <= c < _N_CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    k = robot_id * _N_CHANNELS + c
    return float(_box_muller(_uniform_pairs(seed, step, k + 1)[k]))


def seeded_generator(seed: int, tag: int) -> np.random.Generator:
    """A sequential generator for set-up work (e.g. initial placement).

    ``tag`` separates independent uses of the same seed.
    """
    return np.random.Generator(np.random.Philox(key=[int(seed) & _MASK64, int(tag) & _MASK64]))


def minimum_image(delta: np.ndarray, box: Sequence[float] | np.ndarray) -> np.ndarray:
    """Wrap displacement components into ``[-L/2, L/2)`` along each axis."""
    box = np.asarray(box, dtype=float)
    return delta - box * np.floor(delta / box + 0.5)
