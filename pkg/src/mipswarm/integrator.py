"""Euler-Maruyama stepping of the self-propelled disk dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RobotPose, SwarmParams, SwarmState, noise_block


@dataclass(frozen=True)
class StepInput:
    state: SwarmState
    collision_displacement: np.ndarray  # (N, 2); zeros when collisions are off
    params: SwarmParams
    step_index: int

    def __post_init__(self):
        disp = np.asarray(self.collision_displacement, dtype=float)
        if disp.shape != (self.state.n, 2):
            raise ValueError(f"collision_displacement has shape {disp.shape}, expected ({self.state.n}, 2)")
        object.__setattr__(self, "collision_displacement", disp)


def wrap_periodic(pose: RobotPose, params: SwarmParams) -> RobotPose:
    x = pose.x % params.domain_width
    y = pose.y % params.domain_height
    # float modulo can round up to the period itself for tiny negative inputs
    if x >= params.domain_width:
        x = 0.0
    if y >= params.domain_height:
        y = 0.0
    return RobotPose(x, y, pose.theta)


def reflect_boundary(pose: RobotPose, params: SwarmParams) -> RobotPose:
    r, w, h = params.radius, params.domain_width, params.domain_height
    x, y, theta = pose
    if x < r or x > w - r:
        x = min(max(x, r), w - r)
        theta = math.pi - theta
    if y < r or y > h - r:
        y = min(max(y, r), h - r)
        theta = -theta
    return RobotPose(x, y, theta)


def _wrap_arrays(x, y, params):
    w, h = params.domain_width, params.domain_height
    x = np.mod(x, w)
    y = np.mod(y, h)
    x[x >= w] = 0.0
    y[y >= h] = 0.0
    return x, y


def _reflect_arrays(x, y, theta, params):
    r, w, h = params.radius, params.domain_width, params.domain_height
    hit_x = (x < r) | (x > w - r)
    hit_y = (y < r) | (y > h - r)
    x = np.clip(x, r, w - r)
    y = np.clip(y, r, h - r)
    theta = np.where(hit_x, np.pi - theta, theta)
    theta = np.where(hit_y, -theta, theta)
    return x, y, theta


def apply_boundary(x, y, theta, params: SwarmParams):
    """Vectorised :func:`wrap_periodic` / :func:`reflect_boundary`."""
    if params.periodic:
        x, y = _wrap_arrays(np.array(x, dtype=float), np.array(y, dtype=float), params)
        return x, y, np.asarray(theta, dtype=float)
    return _reflect_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                           np.asarray(theta, dtype=float), params)


def step(inp: StepInput) -> SwarmState:
    """Advance every robot by one time step of length ``params.dt``."""
    s, p, k = inp.state, inp.params, inp.step_index
    dt = p.dt
    xi = noise_block(p.seed, k, s.n)
    trans = math.sqrt(2.0 * p.diff_trans * dt)
    rot = math.sqrt(2.0 * p.diff_rot * dt)

    dx = p.speed * np.cos(s.theta) * dt + trans * xi[:, 0] + inp.collision_displacement[:, 0]
    dy = p.speed * np.sin(s.theta) * dt + trans * xi[:, 1] + inp.collision_displacement[:, 1]
    theta = s.theta + rot * xi[:, 2]

    x, y, theta = apply_boundary(s.x + dx, s.y + dy, theta, p)
    if p.periodic:
        unwrapped = s.unwrapped + np.column_stack([dx, dy])
    else:
        # clamped motion is not displacement; track the actual position change
        unwrapped = s.unwrapped + np.column_stack([x - s.x, y - s.y])
    return SwarmState((k + 1) * dt, x, y, theta, step=k + 1, unwrapped=unwrapped)
