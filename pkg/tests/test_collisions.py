import numpy as np
import pytest

from _oracles import brute_pairs, random_state
from mipswarm.collisions import (
    build_contact_graph,
    build_grid,
    compute_overlap_forces,
    default_cell_size,
    find_pairs,
    overlap_displacements,
)
from mipswarm.core import SwarmParams, SwarmState

P = SwarmParams(n_robots=10, radius=1.0, domain_width=20.0, domain_height=20.0, dt=0.01, force_stiffness=50.0)


def state_of(points, theta=None):
    pts = np.asarray(points, dtype=float)
    th = np.zeros(len(pts)) if theta is None else theta
    return SwarmState(0.0, pts[:, 0], pts[:, 1], th)


class TestGrid:
    def test_single_robot(self):
        g = build_grid(state_of([[3.0, 4.0]]), P)
        assert len(g.cells) == 1
        assert list(g.cells.values()) == [[0]]

    def test_partition(self):
        rng = np.random.default_rng(0)
        s = random_state(rng, P, 300)
        g = build_grid(s, P)
        members = sorted(i for v in g.cells.values() for i in v)
        assert members == list(range(300))
        assert sum(len(v) for v in g.cells.values()) == 300

    def test_cell_of_robot(self):
        s = state_of([[0.5, 19.9], [10.0, 10.0]])
        g = build_grid(s, P, cell_size=2.5)
        assert g.cell_width == (2.5, 2.5)
        assert tuple(g.cell_index[0]) == (0, 7)
        assert tuple(g.cell_index[1]) == (4, 4)

    def test_adjacent_cells_discoverable(self):
        d = 1.9 * 2 * P.radius
        s = state_of([[4.9, 5.0], [4.9 + d, 5.0]])
        g = build_grid(s, P, cell_size=4.0)
        c0, c1 = (tuple(c) for c in g.cell_index)
        assert c0 != c1
        assert 1 in g.neighbourhood(*c0) and 0 in g.neighbourhood(*c1)

    def test_cell_size_at_least_contact(self):
        assert default_cell_size(P) >= 2 * P.radius
        g = build_grid(state_of([[1, 1]]), P)
        assert min(g.cell_width) >= 2 * P.radius

    def test_cutoff_beyond_cell_rejected(self):
        s = state_of([[1, 1], [2, 2]])
        g = build_grid(s, P, cell_size=2.0)
        with pytest.raises(ValueError):
            find_pairs(s, g, P, 3.0)


class TestPairOracle:
    @pytest.mark.parametrize("mode", ["periodic", "reflecting"])
    def test_matches_brute_force(self, mode):
        rng = np.random.default_rng(17)
        for trial in range(150):
            n = int(rng.integers(2, 65))
            side = float(rng.uniform(5.0, 25.0))
            p = SwarmParams(n_robots=n, radius=float(rng.uniform(0.3, 1.0)), domain_width=side,
                            domain_height=float(rng.uniform(5.0, 25.0)), boundary_mode=mode)
            s = random_state(rng, p, n)
            cut = 2 * p.radius
            pairs = find_pairs(s, build_grid(s, p), p, cut)
            assert pairs.as_set() == brute_pairs(s, p, cut)

    def test_small_periodic_box(self):
        # fewer than three cells per side: offsets must not double count
        p = SwarmParams(n_robots=6, radius=1.0, domain_width=5.0, domain_height=5.0)
        rng = np.random.default_rng(2)
        for _ in range(50):
            s = random_state(rng, p, 6)
            pairs = find_pairs(s, build_grid(s, p), p, 2.0)
            assert len(pairs) == len(pairs.as_set())
            assert pairs.as_set() == brute_pairs(s, p, 2.0)


class TestForces:
    def test_no_overlap(self):
        s = state_of([[2, 2], [5, 2], [2, 5]])
        np.testing.assert_array_equal(compute_overlap_forces(s, build_grid(s, P), P), 0.0)

    def test_pair_along_x(self):
        delta = 0.3
        s = state_of([[5.0, 5.0], [5.0 + 2.0 - delta, 5.0]])
        disp = compute_overlap_forces(s, build_grid(s, P), P)
        mag = P.force_stiffness * delta * P.dt / 2
        np.testing.assert_allclose(disp, [[-mag, 0.0], [mag, 0.0]], rtol=1e-12)
        np.testing.assert_allclose(disp.sum(axis=0), 0.0, atol=1e-15)

    def test_across_periodic_seam(self):
        s = state_of([[0.2, 5.0], [19.6, 5.0]])  # 0.6 apart through the seam
        disp = compute_overlap_forces(s, build_grid(s, P), P)
        mag = P.force_stiffness * 1.4 * P.dt / 2
        np.testing.assert_allclose(disp, [[mag, 0.0], [-mag, 0.0]], rtol=1e-12)

    def test_collinear_symmetric(self):
        s = state_of([[4.5, 5.0], [6.0, 5.0], [7.5, 5.0]])
        disp = compute_overlap_forces(s, build_grid(s, P), P)
        np.testing.assert_allclose(disp[1], 0.0, atol=1e-15)
        assert disp[0, 0] < 0 < disp[2, 0]

    def test_coincident_centres(self):
        s = state_of([[5.0, 5.0], [5.0, 5.0]])
        d1 = compute_overlap_forces(s, build_grid(s, P), P)
        d2 = compute_overlap_forces(s, build_grid(s, P), P)
        np.testing.assert_array_equal(d1, d2)
        mag = P.force_stiffness * 2.0 * P.dt / 2
        assert np.hypot(*d1[0]) == pytest.approx(mag)
        np.testing.assert_allclose(d1[0], -d1[1])

    def test_newton_third_law(self):
        rng = np.random.default_rng(4)
        for mode in ("periodic", "reflecting"):
            p = P.replace(boundary_mode=mode)
            for _ in range(200):
                n = int(rng.integers(2, 120))
                s = random_state(rng, p, n)
                disp = compute_overlap_forces(s, build_grid(s, p), p)
                assert np.abs(disp.sum(axis=0)).max() <= 1e-9 * p.force_stiffness * p.dt * n

    def test_overlap_reduced(self):
        for delta in (0.01, 0.5, 1.5):
            s = state_of([[5.0, 5.0], [5.0 + 2.0 - delta, 5.0]])
            disp = compute_overlap_forces(s, build_grid(s, P), P)
            after = s.positions + disp
            assert np.hypot(*(after[1] - after[0])) > 2.0 - delta

    def test_only_overlapping_pairs_push(self):
        s = state_of([[5.0, 5.0], [7.05, 5.0]])
        pairs = find_pairs(s, build_grid(s, P, cell_size=2.5), P, 2.1)
        assert len(pairs) == 1
        np.testing.assert_array_equal(overlap_displacements(pairs, s, P), 0.0)


class TestContactGraph:
    def test_far_apart(self):
        s = state_of([[2, 2], [6, 2], [2, 6]])
        assert len(build_contact_graph(s, P, 0.1)) == 0

    def test_chain(self):
        s = state_of([[2.0 + 2.0 * k, 5.0] for k in range(5)])
        g = build_contact_graph(s, P, 0.05)
        assert g.edge_set() == {(0, 1), (1, 2), (2, 3), (3, 4)}

    def test_seam(self):
        # touching through the seam (1.9 r apart); 18.1 apart without wrapping
        gap = 1.9 * P.radius
        s = state_of([[gap / 2, 5.0], [20.0 - gap / 2, 5.0]])
        assert build_contact_graph(s, P, 0.0).edge_set() == {(0, 1)}
        far = state_of([[1.9, 5.0], [20.0 - 1.9, 5.0]])  # 3.8 = 1.9 * 2r apart through the seam
        assert len(build_contact_graph(far, P, 0.05)) == 0
        reflecting = P.replace(boundary_mode="reflecting")
        assert len(build_contact_graph(s, reflecting, 0.0)) == 0

    def test_tolerance(self):
        s = state_of([[5.0, 5.0], [7.04, 5.0]])
        assert len(build_contact_graph(s, P, 0.0)) == 0
        assert len(build_contact_graph(s, P, 0.05)) == 1
        assert len(build_contact_graph(s, P)) == 1  # default 0.05 r

    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            build_contact_graph(state_of([[1, 1]]), P, -0.1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for mode in ("periodic", "reflecting"):
            p = P.replace(boundary_mode=mode)
            for _ in range(100):
                s = random_state(rng, p, int(rng.integers(2, 65)))
                tol = float(rng.uniform(0, 0.3))
                assert build_contact_graph(s, p, tol).edge_set() == brute_pairs(s, p, 2 + tol)
