"""Sensor model: linear-Gaussian position measurements, detection, clutter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CellGrid


def position_measurement_matrix(state_dim: int = 5) -> np.ndarray:
    h = np.zeros((2, state_dim))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    return h


@dataclass(frozen=True)
class SensorModel:
    """Detection and measurement model.

    p_d is the in-FoV detection probability, either a scalar or one value per
    grid cell. clutter_density is the uniform false-alarm intensity per unit
    measurement area; the mean clutter count over a region is density times
    area.
    """

    H: np.ndarray
    R: np.ndarray
    p_d: float | np.ndarray
    clutter_density: float

    def __post_init__(self):
        h = np.asarray(self.H, dtype=float)
        r = np.asarray(self.R, dtype=float)
        if not np.allclose(r, r.T, atol=1e-12):
            raise ValueError("measurement noise covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(r) < -1e-12):
            raise ValueError("measurement noise covariance must be positive "
                             "semi-definite")
        if self.clutter_density < 0:
            raise ValueError("clutter density must be non-negative")
        pd = self.p_d
        if np.any(np.asarray(pd) < 0) or np.any(np.asarray(pd) > 1):
            raise ValueError("detection probability must lie in [0, 1]")
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "R", r)

    @classmethod
    def make(cls, sigma_z: float, p_d: float, clutter_rate: float,
             grid: CellGrid, state_dim: int = 5) -> "SensorModel":
        """Convenience constructor from a noise sigma and the mean number of
        false alarms per full frame."""
        lo, hi = grid.extent
        frame_area = float(np.prod(hi - lo))
        return cls(H=position_measurement_matrix(state_dim),
                   R=(sigma_z ** 2) * np.eye(2),
                   p_d=p_d,
                   clutter_density=clutter_rate / frame_area)

    def p_d_cell(self, j: int) -> float:
        if np.ndim(self.p_d) == 0:
            return float(self.p_d)
        return float(np.asarray(self.p_d)[j])

    def p_d_cells(self, grid: CellGrid) -> np.ndarray:
        if np.ndim(self.p_d) == 0:
            return np.full(grid.n_cells, float(self.p_d))
        return np.asarray(self.p_d, dtype=float).reshape(grid.n_cells)

    def measure(self, state: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(state, dtype=float)

    def mean_clutter(self, area: float) -> float:
        return self.clutter_density * area
