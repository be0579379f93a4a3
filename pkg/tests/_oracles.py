"""Reference computations shared by the unit and acceptance suites."""


import numpy as np

from mipswarm.core import SwarmParams, SwarmState, minimum_image
from mipswarm.integrator import StepInput, step


def free_flight(params: SwarmParams, n_steps: int, record_every: int = 1, theta0=0.0):
    """Integrate without collisions; return times, (T, N, 2) unwrapped positions, (T, N) headings."""
    n = params.n_robots
    rng = np.random.default_rng(params.seed)
    pos = rng.uniform(0, params.box, size=(n, 2))
    s = SwarmState(0.0, pos[:, 0], pos[:, 1], np.full(n, float(theta0)) if np.isscalar(theta0) else theta0)
    zero = np.zeros((n, 2))
    times, traj, heads = [0.0], [s.unwrapped.copy()], [s.theta.copy()]
    for k in range(n_steps):
        s = step(StepInput(s, zero, params, k))
        if (k + 1) % record_every == 0:
            times.append(s.time)
            traj.append(s.unwrapped.copy())
            heads.append(s.theta.copy())
    return np.array(times), np.array(traj), np.array(heads)


def msd_slope(times, traj, start_fraction=0.0):
    d = traj - traj[0]
    msd = np.einsum("tik,tik->ti", d, d).mean(axis=1)
    keep = times >= start_fraction * times[-1]
    return float(np.polyfit(times[keep], msd[keep], 1)[0])


def translational_msd_slope(seed=11):
    """Pure translational diffusion: returns (slope, 4 Dt)."""
    p = SwarmParams(n_robots=1000, speed=0.0, diff_trans=0.01, diff_rot=1.0, dt=0.01,
                    domain_width=100.0, domain_height=100.0, seed=seed)
    t, traj, _ = free_flight(p, 10_000, record_every=100)
    return msd_slope(t, traj), 4 * p.diff_trans


def angular_variance_slope(seed=12):
    """Heading diffusion: returns (slope of Var[theta(t) - theta(0)], 2 Dr)."""
    p = SwarmParams(n_robots=1000, speed=0.0, diff_trans=0.0, diff_rot=0.5, dt=0.01,
                    domain_width=100.0, domain_height=100.0, seed=seed)
    t, _, heads = free_flight(p, 2_000, record_every=20)
    var = (heads - heads[0]).var(axis=1)
    return float(np.polyfit(t, var, 1)[0]), 2 * p.diff_rot


def long_time_msd_slope(seed=13):
    """Self-propelled free flight at t >> 1/Dr: returns (slope, 4 D)."""
    p = SwarmParams(n_robots=1000, speed=1.0, diff_trans=0.01, diff_rot=1.0, dt=0.01,
                    domain_width=100.0, domain_height=100.0, seed=seed)
    rng = np.random.default_rng(seed)
    theta0 = rng.uniform(0, 2 * np.pi, p.n_robots)
    t, traj, _ = free_flight(p, 20_000, record_every=100, theta0=theta0)
    D = p.speed**2 / (2 * p.diff_rot) + p.diff_trans
    return msd_slope(t, traj, start_fraction=0.25), 4 * D


def brute_pairs(state, params, cutoff):
    """All-pairs set within ``cutoff`` (minimum image when periodic), no spatial structure."""
    pos = state.positions
    i, j = np.triu_indices(state.n, k=1)
    d = pos[j] - pos[i]
    if params.periodic:
        d = minimum_image(d, params.box)
    close = np.hypot(d[:, 0], d[:, 1]) <= cutoff
    return set(zip(i[close].tolist(), j[close].tolist()))


def union_find_sizes(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    roots = [find(a) for a in range(n)]
    counts = {}
    for r in roots:
        counts[r] = counts.get(r, 0) + 1
    return np.array([counts[r] for r in roots])


def random_state(rng, params, n):
    pos = rng.uniform(0, params.box, size=(n, 2))
    if not params.periodic:
        r = params.radius
        pos = rng.uniform([r, r], params.box - r, size=(n, 2))
    return SwarmState(0.0, pos[:, 0], pos[:, 1], rng.uniform(0, 2 * np.pi, n))
