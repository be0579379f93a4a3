"""Closed-form and quadrature results for collision-slowed self-propelled disks.

All functions are pure.  Densities are number densities (robots per unit
area); the free energy is in dimensionless thermal units, so only its
curvature carries meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate


class TheoryError(ValueError):
    pass


class DegenerateSpeed(TheoryError):
    pass


class DensityAboveClosePacking(TheoryError):
    pass


class NonpositiveDensity(TheoryError):
    pass


@dataclass(frozen=True)
class TheoryInputs:
    v0: float
    Dt: float
    Dr: float
    r: float
    tau_m: float

    def __post_init__(self):
        bad = []
        if not self.Dr > 0:
            bad.append("Dr")
        if not self.r > 0:
            bad.append("r")
        if not self.tau_m > 0:
            bad.append("tau_m")
        if not self.v0 >= 0:
            bad.append("v0")
        if not self.Dt >= 0:
            bad.append("Dt")
        if bad:
            raise TheoryError(f"invalid theory inputs: {', '.join(bad)}")

    @classmethod
    def from_params(cls, params, tau_m: float) -> "TheoryInputs":
        return cls(params.speed, params.diff_trans, params.diff_rot, params.radius, tau_m)


@dataclass(frozen=True)
class SpinodalResult:
    exists: bool
    lambda_star: float
    lambda_minus: float | None = None
    lambda_plus: float | None = None
    density_range: tuple | None = None

    def contains(self, density: float) -> bool:
        if not self.exists:
            return False
        lo, hi = self.density_range
        return lo <= density <= hi


def effective_diffusion(p: TheoryInputs) -> float:
    return p.v0**2 / (2.0 * p.Dr) + p.Dt


def activity(p: TheoryInputs) -> float:
    return p.v0 / (2.0 * p.r * p.Dr)


def collision_rate(p: TheoryInputs, lam: float) -> float:
    """Inverse of :func:`collision_time`; relative speed between robots is (4/pi) v0."""
    return 4.0 * p.r * (4.0 / math.pi) * p.v0 * lam


def collision_time(p: TheoryInputs, lam: float) -> float:
    if lam < 0:
        raise NonpositiveDensity(f"density {lam} < 0")
    rate = collision_rate(p, lam)
    return math.inf if rate == 0 else 1.0 / rate


def packing_density(p: TheoryInputs) -> float:
    if p.v0 == 0:
        raise DegenerateSpeed("packing density is undefined for v0 = 0")
    return 1.0 / (4.0 * p.r * (4.0 / math.pi) * p.v0 * p.tau_m)


def speed_at_density(p: TheoryInputs, lam: float, exact: bool = False) -> float:
    """Mean speed at density ``lam``.

    The default is the linearised law ``v0 (1 - lam/lam*)``; ``exact=True``
    returns ``v0 (1 - tau_m / (tau_c + tau_m))`` without the tau_m << tau_c step.
    """
    if lam < 0:
        raise NonpositiveDensity(f"density {lam} < 0")
    if exact:
        tc = collision_time(p, lam)
        if math.isinf(tc):
            return p.v0
        return p.v0 * (1.0 - p.tau_m / (tc + p.tau_m))
    lam_star = packing_density(p)
    if lam > lam_star:
        raise DensityAboveClosePacking(f"density {lam} exceeds packing density {lam_star}")
    return p.v0 * (1.0 - lam / lam_star)


def _linear_speed(p, lam_star, s):
    return p.v0 * (1.0 - s / lam_star)


def velocity_free_energy_integrand(p: TheoryInputs, s):
    lam_star = packing_density(p)
    v = _linear_speed(p, lam_star, s)
    return 0.5 * np.log(v**2 / p.Dr + 2.0 * p.Dt)


def _check_density(p, lam, closed: bool):
    if lam <= 0:
        raise NonpositiveDensity(f"density {lam} <= 0")
    lam_star = packing_density(p)
    if lam > lam_star or (not closed and lam == lam_star):
        raise DensityAboveClosePacking(f"density {lam} outside (0, {lam_star})")
    return lam_star


def free_energy_density(p: TheoryInputs, lam: float, epsrel: float = 1e-8) -> float:
    """Ideal-gas entropy plus the speed-derived excess term, by adaptive quadrature."""
    _check_density(p, lam, closed=p.Dt > 0)
    val, _ = integrate.quad(
        lambda s: velocity_free_energy_integrand(p, s), 0.0, lam,
        epsabs=0.0, epsrel=epsrel, limit=200,
    )
    return lam * (math.log(lam) - 1.0) + val


def free_energy_second_derivative(p: TheoryInputs, lam: float) -> float:
    lam_star = _check_density(p, lam, closed=False)
    v = _linear_speed(p, lam_star, lam)
    dv = -p.v0 / lam_star
    return 1.0 / lam + (v * dv / p.Dr) / (v**2 / p.Dr + 2.0 * p.Dt)


def concavity_condition(p: TheoryInputs, lam: float) -> bool:
    """The velocity-side inequality that is equivalent to ``f'' < 0``."""
    lam_star = _check_density(p, lam, closed=False)
    v = _linear_speed(p, lam_star, lam)
    dv = -p.v0 / lam_star
    return (v**2 / p.Dr) * (1.0 + lam * dv / v) < -2.0 * p.Dt


def phase_separation_possible(p: TheoryInputs) -> bool:
    return p.v0 > math.sqrt(16.0 * p.Dt * p.Dr)


def spinodal_densities(p: TheoryInputs) -> SpinodalResult:
    lam_star = packing_density(p)
    if not phase_separation_possible(p):
        return SpinodalResult(False, lam_star)
    root = math.sqrt(1.0 - 16.0 * p.Dt * p.Dr / p.v0**2)
    lo = 0.25 * lam_star * (3.0 - root)
    hi = 0.25 * lam_star * (3.0 + root)
    return SpinodalResult(True, lam_star, lo, hi, (lo, min(hi, lam_star)))
