import math

import numpy as np
import pytest
from scipy.optimize import bisect

from mipswarm import theory as th
from mipswarm.theory import TheoryInputs

FIG4 = TheoryInputs(v0=4.0, Dt=1e-5, Dr=1e-4, r=1.0, tau_m=0.177)


def simpson(fn, a, b, panels):
    """Composite Simpson rule on ``panels`` (even) sub-intervals."""
    x = np.linspace(a, b, panels + 1)
    y = fn(x)
    h = (b - a) / panels
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def brute_free_energy(p, lam, panels=1_000_000):
    lam_star = math.pi / (16.0 * p.r * p.v0 * p.tau_m)

    def integrand(s):
        v = p.v0 * (1.0 - s / lam_star)
        return 0.5 * np.log(v * v / p.Dr + 2.0 * p.Dt)

    return lam * (math.log(lam) - 1.0) + simpson(integrand, 0.0, lam, panels)


def random_inputs(rng, separable=True):
    """Random parameters; ``separable`` restricts to v0 > sqrt(16 Dt Dr)."""
    while True:
        v0 = rng.uniform(0.5, 8.0)
        Dr = 10 ** rng.uniform(-4, 1)
        r = rng.uniform(0.5, 2.0)
        tau_m = rng.uniform(0.05, 0.5)
        ratio = 10 ** rng.uniform(-4, 0.5)  # 16 Dt Dr / v0^2
        Dt = ratio * v0**2 / (16.0 * Dr)
        p = TheoryInputs(v0, Dt, Dr, r, tau_m)
        if separable is None or th.phase_separation_possible(p) == separable:
            return p


class TestClosedForms:
    def test_effective_diffusion(self):
        assert th.effective_diffusion(TheoryInputs(0.0, 0.3, 2.0, 1.0, 0.1)) == 0.3
        assert th.effective_diffusion(FIG4) == pytest.approx(80000.00001, rel=1e-15)
        p = FIG4
        q = TheoryInputs(2 * p.v0, p.Dt, p.Dr, p.r, p.tau_m)
        assert th.effective_diffusion(q) - p.Dt == pytest.approx(4 * (th.effective_diffusion(p) - p.Dt))

    def test_activity(self):
        assert th.activity(TheoryInputs(0.0, 0.0, 1.0, 1.0, 0.1)) == 0.0
        assert th.activity(FIG4) == pytest.approx(20000.0)
        scaled = TheoryInputs(3 * FIG4.v0, FIG4.Dt, 3 * FIG4.Dr, FIG4.r, FIG4.tau_m)
        assert th.activity(scaled) == pytest.approx(th.activity(FIG4))

    def test_collision_time(self):
        p = TheoryInputs(4.0, 0.0, 1.0, 1.0, 0.1)
        assert math.isinf(th.collision_time(p, 0.0))
        assert th.collision_time(p, 0.1) == pytest.approx(math.pi / (16 * 4 * 0.1))
        assert th.collision_time(p, 0.1) == pytest.approx(0.4908738521234052)
        assert th.collision_time(p, 0.2) == pytest.approx(th.collision_time(p, 0.1) / 2)
        assert math.isinf(th.collision_time(TheoryInputs(0.0, 0.0, 1.0, 1.0, 0.1), 0.3))

    def test_packing_density(self):
        assert th.packing_density(FIG4) == pytest.approx(0.277330, abs=5e-6)
        double = TheoryInputs(4.0, 1e-5, 1e-4, 1.0, 2 * 0.177)
        assert th.packing_density(double) == pytest.approx(th.packing_density(FIG4) / 2)
        with pytest.raises(th.DegenerateSpeed):
            th.packing_density(TheoryInputs(0.0, 1e-5, 1e-4, 1.0, 0.177))

    def test_speed_law(self):
        ls = th.packing_density(FIG4)
        assert th.speed_at_density(FIG4, 0.0) == 4.0
        assert th.speed_at_density(FIG4, ls) == pytest.approx(0.0, abs=1e-12)
        assert th.speed_at_density(FIG4, ls / 2) == pytest.approx(2.0)
        with pytest.raises(th.DensityAboveClosePacking):
            th.speed_at_density(FIG4, 1.01 * ls)

    def test_speed_law_monotone_and_taylor_bound(self):
        ls = th.packing_density(FIG4)
        lams = np.linspace(0, ls, 201)
        v = [th.speed_at_density(FIG4, x) for x in lams]
        assert np.all(np.diff(v) <= 0)
        for x in lams[lams <= 0.5 * ls]:
            lin = th.speed_at_density(FIG4, x)
            exact = th.speed_at_density(FIG4, x, exact=True)
            assert abs(lin - exact) / FIG4.v0 <= (x / ls) ** 2 + 1e-15

    def test_invalid_inputs(self):
        with pytest.raises(th.TheoryError):
            TheoryInputs(1.0, 0.0, 0.0, 1.0, 0.1)
        with pytest.raises(th.TheoryError):
            TheoryInputs(1.0, -1.0, 1.0, 1.0, 0.1)

    def test_pure(self):
        a = [th.free_energy_density(FIG4, 0.1), th.spinodal_densities(FIG4)]
        b = [th.free_energy_density(FIG4, 0.1), th.spinodal_densities(FIG4)]
        assert a == b


class TestFreeEnergy:
    def test_small_density_limit(self):
        for lam in (1e-6, 1e-8):
            f = th.free_energy_density(FIG4, lam)
            assert abs(f - lam * (math.log(lam) - 1)) < 10 * lam

    def test_constant_speed_limit(self):
        # tau_m -> 0 pushes lam* to infinity, so v(s) ~ v0 on [0, lam]
        p = TheoryInputs(4.0, 1e-5, 1e-4, 1.0, 1e-14)
        lam = 0.1
        expected = lam * (math.log(lam) - 1) + 0.5 * lam * math.log(16 / 1e-4 + 2e-5)
        assert th.free_energy_density(p, lam) == pytest.approx(expected, rel=1e-8)

    def test_quadrature_matches_simpson(self):
        got = th.free_energy_density(FIG4, 0.1)
        ref = brute_free_energy(FIG4, 0.1)
        assert got == pytest.approx(ref, rel=1e-6)

    def test_domain_errors(self):
        with pytest.raises(th.NonpositiveDensity):
            th.free_energy_density(FIG4, 0.0)
        with pytest.raises(th.DensityAboveClosePacking):
            th.free_energy_density(FIG4, 0.3)
        p0 = TheoryInputs(4.0, 0.0, 1e-4, 1.0, 0.177)
        with pytest.raises(th.DensityAboveClosePacking):
            th.free_energy_density(p0, th.packing_density(p0))
        # closed endpoint allowed when Dt > 0
        assert np.isfinite(th.free_energy_density(FIG4, th.packing_density(FIG4)))


class TestSecondDerivative:
    def test_entropy_dominates_near_zero(self):
        assert th.free_energy_second_derivative(FIG4, 1e-9) > 1e8

    @pytest.mark.parametrize("p", [FIG4, TheoryInputs(2.0, 0.05, 1.0, 1.0, 0.2)])
    def test_finite_difference(self, p):
        ls = th.packing_density(p)
        lam, h = 0.6 * ls, 1e-5 * ls
        f = lambda x: th.free_energy_density(p, x)
        fd = (f(lam + h) - 2 * f(lam) + f(lam - h)) / h**2
        assert fd == pytest.approx(th.free_energy_second_derivative(p, lam), rel=1e-4)

    def test_sign_matches_velocity_condition(self):
        for p in (FIG4, TheoryInputs(2.0, 0.05, 1.0, 1.0, 0.2), TheoryInputs(1.0, 1.0, 1.0, 1.0, 0.2)):
            ls = th.packing_density(p)
            for lam in np.linspace(1e-4, 1 - 1e-4, 997) * ls:
                assert (th.free_energy_second_derivative(p, lam) < 0) == th.concavity_condition(p, lam)


def bisection_spinodals(p):
    ls = th.packing_density(p)
    fpp = lambda x: th.free_energy_second_derivative(p, x)
    grid = np.linspace(1e-6, 1 - 1e-9, 20001) * ls
    vals = np.array([fpp(x) for x in grid])
    k = int(np.argmin(vals))
    assert vals[k] < 0
    lo = bisect(fpp, grid[0], grid[k], xtol=1e-12 * ls, maxiter=500)
    hi = bisect(fpp, grid[k], ls * (1 - 1e-15), xtol=1e-12 * ls, maxiter=500)
    return lo, hi


class TestSpinodals:
    def test_zero_translational_noise(self):
        p = TheoryInputs(4.0, 0.0, 1e-4, 1.0, 0.177)
        res = th.spinodal_densities(p)
        assert res.exists
        assert res.lambda_minus == pytest.approx(res.lambda_star / 2, rel=1e-15)
        assert res.lambda_plus == pytest.approx(res.lambda_star, rel=1e-15)

    def test_fig4_parameters(self):
        res = th.spinodal_densities(FIG4)
        assert res.exists
        assert math.sqrt(16 * 1e-5 * 1e-4) == pytest.approx(1.2649e-4, rel=1e-4)
        assert res.lambda_minus / res.lambda_star == pytest.approx(0.5, abs=1e-9)
        assert res.lambda_plus / res.lambda_star == pytest.approx(1.0, abs=1e-9)
        lo, hi = res.density_range
        assert lo == pytest.approx(0.13866, abs=1e-5)
        assert hi == pytest.approx(0.27733, abs=1e-5)
        assert hi <= res.lambda_star

    def test_no_spinodal_at_threshold(self):
        Dt, Dr = 0.25, 1.0
        p = TheoryInputs(math.sqrt(16 * Dt * Dr), Dt, Dr, 1.0, 0.2)
        res = th.spinodal_densities(p)
        assert not res.exists and res.lambda_minus is None and res.density_range is None

    def test_degenerate_speed(self):
        with pytest.raises(th.DegenerateSpeed):
            th.spinodal_densities(TheoryInputs(0.0, 1e-5, 1e-4, 1.0, 0.177))

    def test_bisection_agreement(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p = random_inputs(rng)
            res = th.spinodal_densities(p)
            lo, hi = bisection_spinodals(p)
            assert abs(lo - res.lambda_minus) <= 1e-6 * res.lambda_star
            assert abs(hi - res.lambda_plus) <= 1e-6 * res.lambda_star
            assert 0 < res.lambda_minus <= res.lambda_plus <= res.lambda_star
