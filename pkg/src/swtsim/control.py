"""FoV selection policies: windowed-gain maximization and baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CellGrid, Fov, admissible_fovs
from .info_gain import GainArrays, GainEvaluator, QuadratureSpec, null_gain_coefficient
from .rfs import GaussianMixturePhd
from .sensor import SensorModel


@dataclass(frozen=True)
class Policy:
    """FoV selection policy: expected-gain maximization, the ideal-measurement
    baseline, or uniform random placement."""

    kind: str
    fov_shape: tuple[int, int]
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cellmb", "pims", "random"):
            raise ValueError(f"unknown policy kind {self.kind!r}")


def windowed_sums(field: np.ndarray, grid: CellGrid,
                  fov_shape: tuple[int, int]) -> np.ndarray:
    """Sum of the per-cell field over every anchored window, via a 2-D
    summed-area table. Entry [row, col] is the window sum anchored there."""
    w, h = fov_shape
    values = field.reshape(grid.n_rows, grid.n_cols)
    sat = np.zeros((grid.n_rows + 1, grid.n_cols + 1))
    sat[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    out = (sat[h:, w:] - sat[:-h, w:] - sat[h:, :-w] + sat[:-h, :-w])
    return out


def select_fov_cellmb(gains: GainArrays, grid: CellGrid,
                      fov_shape: tuple[int, int],
                      placements: list[Fov] | None = None) -> Fov:
    """Placement maximizing the windowed sum of total per-cell gains; ties
    break toward the lowest row-major anchor."""
    if placements is None:
        placements = admissible_fovs(grid, fov_shape)
    if not placements:
        raise ValueError("no admissible FoV placement inside the field of regard")
    sums = windowed_sums(gains.total, grid, fov_shape)
    best = None
    best_value = -np.inf
    for fov in placements:
        value = sums[fov.row, fov.col]
        if value > best_value:
            best_value = value
            best = fov
    return best


def select_fov_pims(tracks_phd: GaussianMixturePhd, track_modes,
                    lambdas: np.ndarray, sensor: SensorModel, grid: CellGrid,
                    fov_shape: tuple[int, int],
                    quad: QuadratureSpec = QuadratureSpec(),
                    placements: list[Fov] | None = None) -> Fov:
    """Ideal-measurement-set baseline.

    Each placement is scored by the divergence gain of the noiseless,
    clutter-free measurement set generated by confident tracks inside it,
    plus the no-detection search term of the covered cells. Deterministic.

    track_modes: sequence of (existence, state) pairs for current tracks.
    """
    if placements is None:
        placements = admissible_fovs(grid, fov_shape)
    if not placements:
        raise ValueError("no admissible FoV placement inside the field of regard")
    lambdas = np.asarray(lambdas, dtype=float)
    pd = sensor.p_d_cells(grid)
    search_term = lambdas * np.array([null_gain_coefficient(p) for p in pd])
    ev = GainEvaluator(tracks_phd, sensor, grid, quad)
    confident = [(r, pos) for r, pos in track_modes if r > 0.5]

    best = None
    best_value = -np.inf
    for fov in placements:
        cells = fov.cells(grid)
        pims = np.array([pos[:2] for r, pos in confident
                         if fov.contains_point(grid, pos[:2])])
        if pims.size == 0:
            pims = np.zeros((0, 2))
        value = ev.gain(pims, cells) + float(search_term[cells].sum())
        if value > best_value:
            best_value = value
            best = fov
    return best


def select_fov_random(placements: list[Fov], rng: np.random.Generator) -> Fov:
    """Uniform draw over the admissible placements."""
    if not placements:
        raise ValueError("no admissible FoV placement to draw from")
    return placements[int(rng.integers(len(placements)))]
