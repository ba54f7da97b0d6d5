"""Nearly coordinated turn motion with directional process noise.

State layout: [x, y, vx, vy, omega] with positions in pixels, rates in
pixels/s, and turn rate in rad/s. Process noise enters through tangential and
normal accelerations rotated into an optional road frame, plus turn-rate
noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ARCMIN_TO_RAD = math.pi / (180.0 * 60.0)

# Below this turn rate the constant-velocity limit of the turn map is exact
# to machine precision and avoids the 1/omega singularity.
TURN_RATE_FLOOR = 1e-6


@dataclass(frozen=True)
class MotionModel:
    """Coordinated-turn kinematics with directional acceleration noise.

    sigma_tangential / sigma_normal are accelerations (pixel/s^2) along and
    across the local road direction; sigma_turn_arcmin is turn-rate noise in
    arcmin/s. road_angle gives the road direction at a position (radians from
    the horizontal axis); None means axis-aligned noise.
    """

    dt: float
    sigma_tangential: float
    sigma_normal: float
    sigma_turn_arcmin: float
    p_survival: float = 1.0
    road_angle: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if min(self.sigma_tangential, self.sigma_normal, self.sigma_turn_arcmin) < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.p_survival <= 1.0:
            raise ValueError("survival probability must lie in [0, 1]")

    @property
    def sigma_turn_rad(self) -> float:
        return self.sigma_turn_arcmin * ARCMIN_TO_RAD

    def noise_gain(self) -> np.ndarray:
        dt = self.dt
        return np.array([
            [0.5 * dt * dt, 0.0, 0.0],
            [0.0, 0.5 * dt * dt, 0.0],
            [dt, 0.0, 0.0],
            [0.0, dt, 0.0],
            [0.0, 0.0, dt],
        ])

    def noise_cov_input(self, position: np.ndarray) -> np.ndarray:
        """Covariance of the acceleration/turn-rate noise vector at a position."""
        psi = 0.0 if self.road_angle is None else float(self.road_angle(position))
        c, s = math.cos(psi), math.sin(psi)
        rot = np.array([[c, s], [-s, c]])
        q_dir = np.diag([self.sigma_tangential ** 2, self.sigma_normal ** 2])
        q = np.zeros((3, 3))
        q[:2, :2] = rot.T @ q_dir @ rot
        q[2, 2] = self.sigma_turn_rad ** 2
        return q

    def process_noise_cov(self, position: np.ndarray) -> np.ndarray:
        gain = self.noise_gain()
        return gain @ self.noise_cov_input(position) @ gain.T


def ct_transition(states: np.ndarray, dt: float) -> np.ndarray:
    """Coordinated-turn map applied to an (n, 5) array of states."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = states.copy()
    omega = states[:, 4]
    vx = states[:, 2]
    vy = states[:, 3]
    turning = np.abs(omega) >= TURN_RATE_FLOOR
    straight = ~turning

    out[straight, 0] += dt * vx[straight]
    out[straight, 1] += dt * vy[straight]

    if np.any(turning):
        w = omega[turning]
        swt = np.sin(w * dt)
        cwt = np.cos(w * dt)
        out[turning, 0] += (swt / w) * vx[turning] - ((1.0 - cwt) / w) * vy[turning]
        out[turning, 1] += ((1.0 - cwt) / w) * vx[turning] + (swt / w) * vy[turning]
        out[turning, 2] = cwt * vx[turning] - swt * vy[turning]
        out[turning, 3] = swt * vx[turning] + cwt * vy[turning]
    return out


def ut_sigma_points(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Symmetric sigma set (2n points, equal weights 1/2n)."""
    n = mean.shape[0]
    chol = np.linalg.cholesky(n * cov)
    pts = np.vstack([mean + chol[:, i] for i in range(n)]
                    + [mean - chol[:, i] for i in range(n)])
    return pts


def ut_predict(mean: np.ndarray, cov: np.ndarray, model: MotionModel):
    """Unscented propagation through the coordinated-turn map with additive
    process noise evaluated at the prior mean position."""
    pts = ut_sigma_points(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float))
    prop = ct_transition(pts, model.dt)
    new_mean = prop.mean(axis=0)
    diff = prop - new_mean
    new_cov = diff.T @ diff / prop.shape[0]
    new_cov = 0.5 * (new_cov + new_cov.T) + model.process_noise_cov(mean[:2])
    return new_mean, new_cov


def ut_predict_batch(means: np.ndarray, covs: np.ndarray, model: MotionModel):
    """Unscented propagation of a batch of components in one pass."""
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    n, d = means.shape
    chol = np.linalg.cholesky(d * covs)
    # sigma points: (n, 2d, d)
    pts = np.concatenate([means[:, None, :] + np.transpose(chol, (0, 2, 1)),
                          means[:, None, :] - np.transpose(chol, (0, 2, 1))],
                         axis=1)
    prop = ct_transition(pts.reshape(n * 2 * d, d), model.dt).reshape(n, 2 * d, d)
    new_means = prop.mean(axis=1)
    diffs = prop - new_means[:, None, :]
    new_covs = np.einsum("nkd,nke->nde", diffs, diffs) / (2 * d)
    new_covs = 0.5 * (new_covs + np.transpose(new_covs, (0, 2, 1)))
    if model.road_angle is None:
        new_covs += model.process_noise_cov(np.zeros(2))[None, :, :]
    else:
        for i in range(n):
            new_covs[i] += model.process_noise_cov(means[i, :2])
    return new_means, new_covs
