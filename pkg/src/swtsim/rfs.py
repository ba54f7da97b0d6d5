"""Core RFS density representations and operations on their intensities.

Covers Gaussian-mixture and piecewise-homogeneous intensity functions, the
Poisson-RFS wrapper, cell-decomposed multi-Bernoulli fitting, and the
Kullback-Leibler divergence between Poisson processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussians import mvn_pdf, rect_mass
from .grid import CellGrid

# Cells whose integrated intensity falls below this carry no spatial density.
EMPTY_CELL_MASS = 1e-12

# Slack allowed on the unit-mass precondition of the cell fit.
CELL_MASS_SLACK = 1e-9


class SupportError(ValueError):
    """Divergence undefined: the reference intensity vanishes on the support."""


@dataclass(frozen=True)
class GaussianMixturePhd:
    """Weighted Gaussian-mixture intensity over state or measurement space.

    Weights are non-negative but need not sum to one; the total mass is the
    expected number of objects.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        n = w.shape[0]
        m = np.asarray(self.means, dtype=float)
        if n == 0:
            dim = m.shape[-1] if m.ndim == 2 else 2
            m = np.zeros((0, dim))
            c = np.zeros((0, dim, dim))
        else:
            m = np.atleast_2d(m)
            c = np.asarray(self.covs, dtype=float).reshape(n, m.shape[1], m.shape[1])
        if np.any(w < 0):
            raise ValueError("mixture weights must be non-negative")
        if m.shape[0] != n or c.shape[0] != n:
            raise ValueError("weights, means and covariances must align")
        if n:
            if np.max(np.abs(c - np.transpose(c, (0, 2, 1)))) > 1e-9:
                raise ValueError("covariances must be symmetric")
            np.linalg.cholesky(c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @classmethod
    def empty(cls, dim: int = 2) -> "GaussianMixturePhd":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1] if self.n_components else 2

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def position_marginal(self) -> "GaussianMixturePhd":
        """Marginal over the first two (position) state dimensions."""
        if self.dim == 2:
            return self
        return GaussianMixturePhd(self.weights, self.means[:, :2],
                                  self.covs[:, :2, :2])

    def pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0])
        for w, m, c in zip(self.weights, self.means, self.covs):
            out += w * mvn_pdf(points, m, c)
        return out

    def scaled(self, factor: float) -> "GaussianMixturePhd":
        return GaussianMixturePhd(self.weights * factor, self.means, self.covs)


@dataclass(frozen=True)
class PiecewisePhd:
    """Piecewise-homogeneous intensity: one expected count per grid cell."""

    grid: CellGrid
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(self.grid.n_cells)
        if np.any(lam < 0):
            raise ValueError("cell intensities must be non-negative")
        if np.any(lam[~self.grid.roi_mask] != 0.0):
            raise ValueError("cells outside the ROI must carry zero intensity")
        object.__setattr__(self, "lambdas", lam)

    @property
    def mass(self) -> float:
        return float(self.lambdas.sum())

    def pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self.grid.cells_of(points)
        return self.lambdas[cells] / self.grid.cell_area


@dataclass(frozen=True)
class PoissonRfs:
    """Poisson RFS: fully specified by its intensity; cardinality mean equals
    the intensity mass."""

    phd: object
    mean_cardinality: float

    def __post_init__(self):
        mass = self.phd.mass
        if abs(mass - self.mean_cardinality) > 1e-9 * max(1.0, abs(mass)):
            raise ValueError("mean cardinality must equal the intensity mass")


class CellDensity:
    """Spatial density supported on a single cell; integrates to one there."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    @property
    def area(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def pdf(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lattice(self, shape: tuple[int, int]) -> np.ndarray:
        nx, ny = shape
        xs = self.lo[0] + (np.arange(nx) + 0.5) * (self.hi[0] - self.lo[0]) / nx
        ys = self.lo[1] + (np.arange(ny) + 0.5) * (self.hi[1] - self.lo[1]) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def atoms(self, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Discretization into lattice atoms with probabilities from the pdf."""
        pts = self.lattice(shape)
        probs = self.pdf(pts)
        total = probs.sum()
        if total <= 0:
            raise ValueError("cell density has no mass on the lattice")
        return pts, probs / total

    def _in_cell(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)


class UniformCellDensity(CellDensity):
    def pdf(self, points):
        return self._in_cell(points) / self.area


class RestrictedCellDensity(CellDensity):
    """Restriction of an intensity to one cell, normalized by the cell mass."""

    def __init__(self, lo, hi, phd, cell_mass):
        super().__init__(lo, hi)
        self._phd = phd
        self._mass = cell_mass

    def pdf(self, points):
        return np.where(self._in_cell(points), self._phd.pdf(points) / self._mass, 0.0)


class DiscreteCellDensity(CellDensity):
    """Atomic density on fixed support points; used by enumeration oracles."""

    def __init__(self, lo, hi, points, probs):
        super().__init__(lo, hi)
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        probs = np.asarray(probs, dtype=float)
        self.probs = probs / probs.sum()

    def pdf(self, points):
        raise NotImplementedError("atomic density has no continuous pdf")

    def atoms(self, shape=None):
        return self.points, self.probs


@dataclass(frozen=True)
class CellMb:
    """Cell multi-Bernoulli parameters: per-cell existence probability and a
    spatial density supported on that cell (None where the cell is empty)."""

    grid: CellGrid
    r: np.ndarray
    spatial: tuple

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(self.grid.n_cells)
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("existence probabilities must lie in [0, 1]")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "spatial", tuple(self.spatial))

    def pdf(self, points: np.ndarray) -> np.ndarray:
        """Intensity of the cell-MB process: sum of r_j * p_j."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0])
        for rj, dens in zip(self.r, self.spatial):
            if dens is not None and rj > 0:
                out += rj * dens.pdf(points)
        return out


def phd_mass(phd, grid: CellGrid | None = None, cell: int | None = None) -> float:
    """Integral of the intensity over one cell or the whole space."""
    if cell is None:
        return phd.mass
    if isinstance(phd, PiecewisePhd):
        phd.grid.check_cell(cell)
        return float(phd.lambdas[cell])
    if grid is None:
        raise ValueError("cell masses of a Gaussian mixture need the grid")
    grid.check_cell(cell)
    lo, hi = grid.cell_bounds(cell)
    marg = phd.position_marginal()
    total = 0.0
    for w, m, c in zip(marg.weights, marg.means, marg.covs):
        total += w * rect_mass(m, c, lo, hi)
    return total


def fit_cell_mb(phd, grid: CellGrid) -> CellMb:
    """Divergence-minimizing cell-MB fit of an intensity on the given grid.

    Each cell takes existence probability equal to its integrated intensity
    and spatial density equal to the normalized in-cell restriction. Requires
    every cell mass to be at most one.
    """
    r = np.zeros(grid.n_cells)
    spatial = []
    piecewise = isinstance(phd, PiecewisePhd)
    for j in range(grid.n_cells):
        mass = phd_mass(phd, grid, j)
        if mass > 1.0 + CELL_MASS_SLACK:
            raise ValueError(
                f"cell {j} has integrated intensity {mass:.6g} > 1; "
                "refine the grid before fitting")
        r[j] = min(mass, 1.0)
        if mass < EMPTY_CELL_MASS:
            spatial.append(None)
            continue
        lo, hi = grid.cell_bounds(j)
        if piecewise:
            spatial.append(UniformCellDensity(lo, hi))
        else:
            spatial.append(RestrictedCellDensity(lo, hi, phd.position_marginal(), mass))
    return CellMb(grid, r, tuple(spatial))


def _lattice_over_grid(grid: CellGrid, shape: tuple[int, int]):
    pts = [grid.cell_lattice(j, shape) for j in range(grid.n_cells)]
    points = np.concatenate(pts, axis=0)
    volume = grid.cell_area / (shape[0] * shape[1])
    return points, volume


def kld_poisson(d1, d0, grid: CellGrid | None = None,
                lattice_shape: tuple[int, int] = (32, 32)) -> float:
    """Kullback-Leibler divergence between two Poisson processes given their
    intensities: N0 - N1 + integral of D1 log(D1/D0).

    Piecewise/piecewise pairs on a shared grid evaluate in closed form;
    other combinations use a midpoint lattice over the grid cells. Points
    where the reference intensity vanishes but the argument does not raise
    SupportError.
    """
    n1 = d1.mass
    n0 = d0.mass
    if (isinstance(d1, PiecewisePhd) and isinstance(d0, PiecewisePhd)
            and d1.grid is d0.grid):
        term = 0.0
        for lam1, lam0 in zip(d1.lambdas, d0.lambdas):
            if lam1 == 0.0:
                continue
            if lam0 == 0.0:
                raise SupportError("reference intensity is zero on the support")
            term += lam1 * math.log(lam1 / lam0)
        return n0 - n1 + term

    if grid is None:
        grid = d1.grid if isinstance(d1, PiecewisePhd) else getattr(d0, "grid", None)
    if grid is None:
        raise ValueError("kld_poisson needs a grid to place the quadrature lattice")
    points, volume = _lattice_over_grid(grid, lattice_shape)
    v1 = d1.pdf(points)
    v0 = d0.pdf(points)
    bad = (v1 > 0) & (v0 <= 0.0)
    if np.any(bad):
        raise SupportError("reference intensity is zero on the support")
    pos = v1 > 0
    term = float(np.sum(v1[pos] * np.log(v1[pos] / v0[pos])) * volume)
    return n0 - n1 + term


def cellmb_log_density(cellmb: CellMb, points: np.ndarray) -> float:
    """Log density of a cell-MB process at a finite set of points.

    Returns -inf for sets that place two points in one cell.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)) if len(points) else \
        np.zeros((0, 2))
    cells = cellmb.grid.cells_of(points) if points.shape[0] else np.zeros(0, dtype=int)
    if np.unique(cells).size != cells.size:
        return -math.inf
    log_f = 0.0
    occupied = set(int(c) for c in cells)
    for j in range(cellmb.grid.n_cells):
        rj = cellmb.r[j]
        if j in occupied:
            dens = cellmb.spatial[j]
            if rj <= 0.0 or dens is None:
                return -math.inf
            val = float(dens.pdf(points[cells == j])[0])
            if val <= 0.0:
                return -math.inf
            log_f += math.log(rj * val)
        else:
            if rj >= 1.0:
                return -math.inf
            log_f += math.log1p(-rj)
    return log_f
