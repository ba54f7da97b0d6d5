"""Divergence-based information gain and its cell-decomposed expectation.

The reward for a candidate sensor action is the Kullback-Leibler divergence
between the prior intensity and the intensity updated with a hypothetical
measurement set. The expectation over future measurement sets becomes
tractable by approximating the predicted measurement process as a cell
multi-Bernoulli: each cell contributes a no-measurement term and a
single-measurement term weighted by the cell's existence probability.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, xlogy

from .gaussians import (conditional_batch, gm_pdf_2d, rect_mass,
                        rect_masses_any, uniform_to_rect_transfer)
from .grid import CellGrid, Fov
from .rfs import CellMb, GaussianMixturePhd, PiecewisePhd
from .sensor import SensorModel

# Clutter floor used only to resolve the default log-intensity cutoff.
_TINY = 1e-300

# Measurements farther than this many noise sigmas from a cell cannot change
# its integrand above double-precision noise and are skipped.
_Z_REACH_SIGMAS = 8.5

# Mixture components whose mass box misses a cell by this many sigmas are
# dropped from that cell's integrals (omitted mass is below 1e-11).
_COMPONENT_REACH_SIGMAS = 7.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls the per-cell lattice and the histogram quadrature.

    lattice is the uniform sample layout per cell (nx, ny); r_max caps the
    number of quadrature regions per cell; eps_min floors the log-intensity
    of samples worth keeping (None resolves to log of a thousandth of the
    clutter density).
    """

    lattice: tuple[int, int] = (32, 32)
    r_max: int = 8
    eps_min: float | None = None

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError("r_max must be at least 1")
        if self.lattice[0] < 2 or self.lattice[1] < 2:
            raise ValueError("lattice must have at least two samples per axis")

    @property
    def q(self) -> int:
        return self.lattice[0] * self.lattice[1]

    def resolve_eps_min(self, clutter_density: float) -> float:
        if self.eps_min is not None:
            return self.eps_min
        return math.log(max(clutter_density, _TINY) * 1e-3)


@dataclass(frozen=True)
class GainArrays:
    """Per-cell expected gains over the field of regard; zero outside it."""

    discovered: np.ndarray
    undiscovered: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.discovered + self.undiscovered


@dataclass
class GainDiagnostics:
    """Side products of the gain-array computation, for logging."""

    r_discovered: np.ndarray
    r_undiscovered: np.ndarray
    overlap_violation: np.ndarray
    clipped_cells: list = field(default_factory=list)


def null_gain_coefficient(p_d: float) -> float:
    """Per-object gain of observing nothing where detection has probability
    p_d: p + (1 - p) log(1 - p), with the p = 1 limit equal to 1."""
    if p_d >= 1.0:
        return 1.0
    if p_d <= 0.0:
        return 0.0
    return p_d + (1.0 - p_d) * math.log1p(-p_d)


def undiscovered_null_gain(lam: float, p_d: float, cell_in_fov: bool) -> float:
    """Expected gain from covering a cell with lam undiscovered objects and
    recording no detection there."""
    if not cell_in_fov:
        return 0.0
    return lam * null_gain_coefficient(p_d)


def _fov_cell_indices(fov, grid: CellGrid) -> np.ndarray:
    if isinstance(fov, Fov):
        return fov.cells(grid)
    return np.asarray(list(fov), dtype=int)


class MeasurementPhd:
    """Predicted measurement intensity: pushed-through Gaussian mixture plus
    uniform clutter over a set of cells."""

    def __init__(self, gm: GaussianMixturePhd, clutter_density: float,
                 region_cells: np.ndarray, grid: CellGrid):
        self.gm = gm
        self.clutter_density = clutter_density
        self.region = np.zeros(grid.n_cells, dtype=bool)
        self.region[np.asarray(region_cells, dtype=int)] = True
        self.grid = grid
        if gm.n_components:
            sig = np.sqrt(np.maximum(gm.covs[:, 0, 0], gm.covs[:, 1, 1]))
            self._reach = _COMPONENT_REACH_SIGMAS * sig + 1e-9
        else:
            self._reach = np.zeros(0)

    def pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells = self.grid.cells_of(points)
        out = self.clutter_density * self.region[cells].astype(float)
        if self.gm.n_components:
            m = self.gm.means
            lo = points.min(axis=0)
            hi = points.max(axis=0)
            sel = np.flatnonzero((m[:, 0] + self._reach >= lo[0])
                                 & (m[:, 0] - self._reach <= hi[0])
                                 & (m[:, 1] + self._reach >= lo[1])
                                 & (m[:, 1] - self._reach <= hi[1]))
            if sel.size:
                out += gm_pdf_2d(points, self.gm.weights[sel], m[sel],
                                 self.gm.covs[sel])
        return out

    def cell_mass(self, j: int) -> float:
        lo, hi = self.grid.cell_bounds(j)
        total = self.clutter_density * self.grid.cell_area if self.region[j] else 0.0
        if self.gm.n_components:
            total += float(self.gm.weights
                           @ rect_masses_any(self.gm.means, self.gm.covs, lo, hi))
        return total


# cell-to-cell blur transfer matrices, keyed by grid geometry and noise
_TRANSFER_CACHE: dict = {}


def _cell_transfer_matrix(grid: CellGrid, noise_cov: np.ndarray) -> np.ndarray:
    """T[i, j]: mass reaching cell j from a uniform unit source on cell i."""
    key = (grid.origin, grid.cell_size, grid.n_cols, grid.n_rows,
           float(noise_cov[0, 0]), float(noise_cov[1, 1]))
    cached = _TRANSFER_CACHE.get(key)
    if cached is not None:
        return cached
    p = grid.n_cells
    t = np.zeros((p, p))
    reach = _Z_REACH_SIGMAS * math.sqrt(max(noise_cov[0, 0], noise_cov[1, 1]))
    centers = np.array([grid.cell_center(j) for j in range(p)])
    cutoff = np.asarray(grid.cell_size) + reach
    for i in range(p):
        src_lo, src_hi = grid.cell_bounds(i)
        near = np.flatnonzero((np.abs(centers[:, 0] - centers[i, 0]) <= cutoff[0])
                              & (np.abs(centers[:, 1] - centers[i, 1]) <= cutoff[1]))
        for j in near:
            dst_lo, dst_hi = grid.cell_bounds(j)
            t[i, j] = uniform_to_rect_transfer(src_lo, src_hi, dst_lo, dst_hi,
                                               noise_cov)
    _TRANSFER_CACHE[key] = t
    return t


class PiecewiseMeasurementPhd:
    """Measurement intensity induced by a piecewise-homogeneous prior: each
    covered cell's count blurred by the measurement noise, plus clutter."""

    def __init__(self, prior: PiecewisePhd, sensor: SensorModel,
                 region_cells: np.ndarray, grid: CellGrid):
        if abs(sensor.R[0, 1]) > 1e-12:
            raise ValueError("piecewise measurement push-through needs diagonal noise")
        self.prior = prior
        self.sensor = sensor
        self.grid = grid
        self.region = np.zeros(grid.n_cells, dtype=bool)
        self.region[np.asarray(region_cells, dtype=int)] = True
        pd = sensor.p_d_cells(grid)
        strengths = np.where(self.region, prior.lambdas * pd, 0.0)
        self._strengths = strengths
        self._sources = [(int(j), float(strengths[j]))
                         for j in np.flatnonzero(strengths)]
        self._masses = (_cell_transfer_matrix(grid, sensor.R).T @ strengths
                        + sensor.clutter_density * grid.cell_area * self.region)

    def pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0])
        sx = math.sqrt(self.sensor.R[0, 0])
        sy = math.sqrt(self.sensor.R[1, 1])
        reach = _Z_REACH_SIGMAS * max(sx, sy)
        pt_lo = points.min(axis=0) - reach
        pt_hi = points.max(axis=0) + reach
        for j, strength in self._sources:
            lo, hi = self.grid.cell_bounds(j)
            if (hi[0] < pt_lo[0] or lo[0] > pt_hi[0]
                    or hi[1] < pt_lo[1] or lo[1] > pt_hi[1]):
                continue
            px = ndtr((hi[0] - points[:, 0]) / sx) - ndtr((lo[0] - points[:, 0]) / sx)
            py = ndtr((hi[1] - points[:, 1]) / sy) - ndtr((lo[1] - points[:, 1]) / sy)
            out += strength / self.grid.cell_area * px * py
        cells = self.grid.cells_of(points)
        return out + self.sensor.clutter_density * self.region[cells]

    def cell_mass(self, j: int) -> float:
        return float(self._masses[j])


def predicted_measurement_phd(prior: GaussianMixturePhd, fov, sensor: SensorModel,
                              grid: CellGrid) -> MeasurementPhd:
    """Push a discovered-object mixture through the measurement model.

    Each component is weighted by the detection probability at its mean (the
    mixture is assumed split so detection is near-constant per component),
    mapped through the position extraction with added noise, and uniform
    clutter covers the candidate cells.
    """
    cells = _fov_cell_indices(fov, grid)
    in_fov = np.zeros(grid.n_cells, dtype=bool)
    in_fov[cells] = True
    pd = sensor.p_d_cells(grid)
    weights, means, covs = [], [], []
    marg = prior.position_marginal()
    for w, m, c, m_full, c_full in zip(marg.weights, marg.means, marg.covs,
                                       prior.means, prior.covs):
        if w <= 0.0 or not grid.contains(m):
            continue
        cell = grid.cell_of(m)
        if not in_fov[cell]:
            continue
        weights.append(w * pd[cell])
        means.append(sensor.H @ m_full)
        covs.append(sensor.H @ c_full @ sensor.H.T + sensor.R)
    if weights:
        gm = GaussianMixturePhd(np.array(weights), np.array(means), np.array(covs))
    else:
        gm = GaussianMixturePhd.empty(2)
    return MeasurementPhd(gm, sensor.clutter_density, cells, grid)


class GainEvaluator:
    """Shared machinery for cell-restricted divergence-gain evaluation.

    Caches each cell's sample lattice and prior intensity values so that the
    many single-measurement gain evaluations of one planning step reuse them.
    """

    def __init__(self, prior, sensor: SensorModel, grid: CellGrid,
                 quad: QuadratureSpec = QuadratureSpec()):
        self.prior = prior
        self.sensor = sensor
        self.grid = grid
        self.quad = quad
        self.pd = sensor.p_d_cells(grid)
        self.is_gm = isinstance(prior, GaussianMixturePhd)
        if self.is_gm:
            self.marg = prior.position_marginal()
            sig = np.sqrt(np.maximum(self.marg.covs[:, 0, 0],
                                     self.marg.covs[:, 1, 1])) if self.marg.n_components else np.zeros(0)
            self._reach = _COMPONENT_REACH_SIGMAS * sig
            meas_sig = np.sqrt(np.maximum(self.marg.covs[:, 0, 0] + sensor.R[0, 0],
                                          self.marg.covs[:, 1, 1] + sensor.R[1, 1])) \
                if self.marg.n_components else np.zeros(0)
            self._meas_reach = _COMPONENT_REACH_SIGMAS * meas_sig
        self._cells: dict[int, tuple] = {}
        self._z_sigma = math.sqrt(max(sensor.R[0, 0], sensor.R[1, 1]))

    # -- cached per-cell data -------------------------------------------------

    def _components_in_reach(self, j: int) -> np.ndarray:
        lo, hi = self.grid.cell_bounds(j)
        m = self.marg.means
        reach = self._reach + 1e-9
        return np.flatnonzero((m[:, 0] + reach >= lo[0]) & (m[:, 0] - reach <= hi[0])
                              & (m[:, 1] + reach >= lo[1]) & (m[:, 1] - reach <= hi[1])
                              & (self.marg.weights > 0.0))

    def cell_data(self, j: int):
        cached = self._cells.get(j)
        if cached is not None:
            return cached
        pts = self.grid.cell_lattice(j, self.quad.lattice)
        dv = self.grid.cell_area / self.quad.q
        if self.is_gm:
            lo, hi = self.grid.cell_bounds(j)
            sel = self._components_in_reach(j)
            if sel.size:
                dens = gm_pdf_2d(pts, self.marg.weights[sel], self.marg.means[sel],
                                 self.marg.covs[sel])
                mass = float(self.marg.weights[sel]
                             @ rect_masses_any(self.marg.means[sel],
                                               self.marg.covs[sel], lo, hi))
            else:
                dens = np.zeros(pts.shape[0])
                mass = 0.0
        else:
            lam = self.prior.lambdas[j]
            dens = np.full(pts.shape[0], lam / self.grid.cell_area)
            mass = float(lam)
        data = (pts, dens, mass, dv)
        self._cells[j] = data
        return data

    def cell_mass(self, j: int) -> float:
        return self.cell_data(j)[2]

    def cell_out_of_reach(self, j: int) -> bool:
        """True when no mixture component's mass box touches the cell, so
        every gain term of the cell vanishes. Cheap; no lattice evaluation."""
        if not self.is_gm:
            return self.prior.lambdas[j] <= 0.0
        if self.marg.n_components == 0:
            return True
        lo, hi = self.grid.cell_bounds(j)
        m = self.marg.means
        reach = self._reach + 1e-9
        hit = ((m[:, 0] + reach >= lo[0]) & (m[:, 0] - reach <= hi[0])
               & (m[:, 1] + reach >= lo[1]) & (m[:, 1] - reach <= hi[1]))
        return not bool(hit.any())

    # -- pseudo-likelihood denominators ---------------------------------------

    def denominator(self, z: np.ndarray, cells: np.ndarray) -> float:
        """Integral of detection-weighted likelihood against the prior over
        the cells of the active region."""
        z = np.asarray(z, dtype=float)
        if self.is_gm:
            if self.marg.n_components == 0:
                return 0.0
            m = self.marg.means
            keep = np.flatnonzero(
                (np.abs(m[:, 0] - z[0]) <= self._meas_reach)
                & (np.abs(m[:, 1] - z[1]) <= self._meas_reach)
                & (self.marg.weights > 0.0))
            if keep.size == 0:
                return 0.0
            q, m_c, p_c = conditional_batch(m[keep], self.marg.covs[keep], z,
                                            self.sensor.R)
            scaled = self.marg.weights[keep] * q
            cond_reach = _COMPONENT_REACH_SIGMAS * np.sqrt(
                np.maximum(p_c[:, 0, 0], p_c[:, 1, 1])) + 1e-9
            total = 0.0
            for j in cells:
                lo, hi = self.grid.cell_bounds(j)
                hit = np.flatnonzero(
                    (m_c[:, 0] + cond_reach >= lo[0])
                    & (m_c[:, 0] - cond_reach <= hi[0])
                    & (m_c[:, 1] + cond_reach >= lo[1])
                    & (m_c[:, 1] - cond_reach <= hi[1]))
                if hit.size == 0:
                    continue
                masses = rect_masses_any(m_c[hit], p_c[hit], lo, hi)
                total += self.pd[j] * float(scaled[hit] @ masses)
            return total
        lam = self.prior.lambdas
        total = 0.0
        for j in cells:
            if lam[j] <= 0.0:
                continue
            lo, hi = self.grid.cell_bounds(j)
            total += (lam[j] / self.grid.cell_area * self.pd[j]
                      * rect_mass(z, self.sensor.R, lo, hi))
        return total

    def denominators(self, z_points: np.ndarray, cells: np.ndarray) -> np.ndarray:
        return np.array([self.denominator(z, cells) for z in z_points])

    # -- per-cell gain terms ---------------------------------------------------

    def null_gain(self, j: int) -> float:
        return self.cell_mass(j) * null_gain_coefficient(self.pd[j])

    def cell_gain(self, j: int, z_points: np.ndarray, denoms: np.ndarray) -> float:
        """Gain contribution of cell j given the measurements that can reach
        it; the no-measurement case is closed form."""
        if len(z_points) == 0:
            return self.null_gain(j)
        pts, dens, _, dv = self.cell_data(j)
        p = self.pd[j]
        ratio = np.zeros(pts.shape[0])
        kappa = self.sensor.clutter_density
        for z, denom in zip(z_points, denoms):
            total = kappa + denom
            if total <= 0.0:
                raise ValueError("degenerate model: zero clutter and no prior "
                                 "support at a measurement")
            lik = gm_pdf_2d(pts, np.ones(1), np.asarray(z, dtype=float)[None, :],
                            self.sensor.R[None, :, :])
            ratio += lik / total
        ell = 1.0 - p + p * ratio
        integrand = dens * (1.0 - ell + xlogy(ell, ell))
        return float(integrand.sum() * dv)

    def single_measurement_gains(self, j: int, z_points: np.ndarray) -> np.ndarray:
        """Cell-restricted gains of each measurement taken alone, evaluated
        in one batched lattice pass."""
        z = np.atleast_2d(np.asarray(z_points, dtype=float))
        if z.shape[0] == 0:
            return np.zeros(0)
        pts, dens, _, dv = self.cell_data(j)
        p = self.pd[j]
        kappa = self.sensor.clutter_density
        cell = np.array([j])
        totals = kappa + self.denominators(z, cell)
        if np.any(totals <= 0.0):
            raise ValueError("degenerate model: zero clutter and no prior "
                             "support at a measurement")
        # likelihood matrix N(z_k; s, R) over (k, lattice)
        r_cov = self.sensor.R
        if abs(r_cov[0, 1]) <= 1e-12:
            dx = (pts[None, :, 0] - z[:, 0, None]) / math.sqrt(r_cov[0, 0])
            dy = (pts[None, :, 1] - z[:, 1, None]) / math.sqrt(r_cov[1, 1])
            liks = (np.exp(-0.5 * (dx * dx + dy * dy))
                    / (2.0 * math.pi * math.sqrt(r_cov[0, 0] * r_cov[1, 1])))
        else:
            liks = np.empty((z.shape[0], pts.shape[0]))
            for k in range(z.shape[0]):
                liks[k] = gm_pdf_2d(pts, np.ones(1), z[k][None, :],
                                    r_cov[None, :, :])
        ell = 1.0 - p + p * liks / totals[:, None]
        integrand = dens[None, :] * (1.0 - ell + xlogy(ell, ell))
        return integrand.sum(axis=1) * dv

    def _reachable(self, z_points: np.ndarray, j: int) -> np.ndarray:
        if len(z_points) == 0:
            return np.zeros(0, dtype=bool)
        lo, hi = self.grid.cell_bounds(j)
        reach = _Z_REACH_SIGMAS * self._z_sigma
        z = np.atleast_2d(z_points)
        return ((z[:, 0] >= lo[0] - reach) & (z[:, 0] <= hi[0] + reach)
                & (z[:, 1] >= lo[1] - reach) & (z[:, 1] <= hi[1] + reach))

    def gain(self, z_points, cells: np.ndarray) -> float:
        """Joint divergence gain of a measurement set over a cell-aligned
        region, with denominators taken over the whole region."""
        z = np.atleast_2d(np.asarray(z_points, dtype=float)) if len(z_points) else \
            np.zeros((0, 2))
        cells = np.asarray(cells, dtype=int)
        denoms = self.denominators(z, cells)
        total = 0.0
        for j in cells:
            mask = self._reachable(z, j)
            if not mask.any():
                total += self.null_gain(j)
            else:
                total += self.cell_gain(j, z[mask], denoms[mask])
        return total


def pseudo_likelihood(z_points, state, fov, prior, sensor: SensorModel,
                      grid: CellGrid) -> float:
    """Measurement-update factor at a single state: miss probability plus the
    per-measurement association terms."""
    state = np.asarray(state, dtype=float)
    position = sensor.H @ state if state.shape[0] > 2 else state
    cells = _fov_cell_indices(fov, grid)
    in_fov = np.zeros(grid.n_cells, dtype=bool)
    in_fov[cells] = True
    if not grid.contains(position):
        p_d = 0.0
    else:
        cell = grid.cell_of(position)
        p_d = sensor.p_d_cell(cell) if in_fov[cell] else 0.0
    z = np.atleast_2d(np.asarray(z_points, dtype=float)) if len(z_points) else \
        np.zeros((0, 2))
    if p_d == 0.0:
        return 1.0
    ev = GainEvaluator(prior, sensor, grid)
    value = 1.0 - p_d
    for zi in z:
        denom = sensor.clutter_density + ev.denominator(zi, cells)
        if denom <= 0.0:
            raise ValueError("degenerate model: zero clutter and no prior "
                             "support at a measurement")
        lik = float(gm_pdf_2d(position[None, :], np.ones(1), zi[None, :],
                              sensor.R[None, :, :])[0])
        value += p_d * lik / denom
    return value


def phd_kld_gain(z_points, fov, prior, sensor: SensorModel, grid: CellGrid,
                 quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Divergence gain of updating the prior intensity with a measurement set
    observed over the given cell-aligned region."""
    cells = _fov_cell_indices(fov, grid)
    if len(cells) == 0:
        return 0.0
    ev = GainEvaluator(prior, sensor, grid, quad)
    return ev.gain(z_points, cells)


def cell_decompose_gain(z_points, fov, prior, sensor: SensorModel, grid: CellGrid,
                        quad: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Per-cell gains: each cell is scored as its own field of view against
    the measurements falling inside it. Sums approximate the joint gain."""
    cells = _fov_cell_indices(fov, grid)
    z = np.atleast_2d(np.asarray(z_points, dtype=float)) if len(z_points) else \
        np.zeros((0, 2))
    z_cells = grid.cells_of(z) if z.shape[0] else np.zeros(0, dtype=int)
    ev = GainEvaluator(prior, sensor, grid, quad)
    gains = np.zeros(grid.n_cells)
    for j in cells:
        zj = z[z_cells == j]
        denoms = ev.denominators(zj, np.array([j]))
        gains[j] = ev.cell_gain(j, zj, denoms)
    return gains


def overlap_violation_fractions(prior: GaussianMixturePhd, sensor: SensorModel,
                                grid: CellGrid) -> np.ndarray:
    """Fraction of each cell's predicted measurement mass that leaks outside
    the cell, weighted over the components homed there. Quantifies how far
    the inputs are from the no-cross-cell-measurement assumption."""
    marg = prior.position_marginal()
    leak = np.zeros(grid.n_cells)
    weight = np.zeros(grid.n_cells)
    for w, m, c, cf in zip(marg.weights, marg.means, marg.covs, prior.covs):
        if w <= 0.0 or not grid.contains(m):
            continue
        home = grid.cell_of(m)
        meas_cov = c + sensor.R
        lo, hi = grid.cell_bounds(home)
        inside = rect_mass(m, meas_cov, lo, hi)
        leak[home] += w * (1.0 - inside)
        weight[home] += w
    out = np.zeros(grid.n_cells)
    nz = weight > 0
    out[nz] = leak[nz] / weight[nz]
    return out


def expected_gain_cellmb(r: np.ndarray, null_gains: np.ndarray,
                         conditional_gains: np.ndarray) -> float:
    """Expected gain under a cell multi-Bernoulli measurement process: each
    cell mixes its no-measurement and single-measurement gains by the cell
    existence probability."""
    r = np.asarray(r, dtype=float)
    return float(np.sum((1.0 - r) * np.asarray(null_gains)
                        + r * np.asarray(conditional_gains)))


def brute_force_expected_gain(cellmb: CellMb, gain_fn,
                              lattice_shape: tuple[int, int] = (4, 4)) -> float:
    """Exact expectation of a set function under a cell multi-Bernoulli by
    enumerating per-cell occupancy patterns and integrating occupied cells'
    spatial densities on a dense lattice. Cost grows as 2^P; refuses P > 6."""
    grid = cellmb.grid
    p = grid.n_cells
    if p > 6:
        raise ValueError(f"brute-force expectation refuses P = {p} > 6 cells")
    atoms = []
    for j in range(p):
        rj = cellmb.r[j]
        dens = cellmb.spatial[j]
        if rj > 0.0 and dens is not None:
            pts, probs = dens.atoms(lattice_shape)
            atoms.append((j, rj, pts, probs))
        elif rj > 0.0:
            raise ValueError(f"cell {j} has existence {rj} but no density")
    total = 0.0
    n_active = len(atoms)
    for pattern in itertools.product((0, 1), repeat=n_active):
        prob = 1.0
        occupied = []
        for bit, (j, rj, pts, probs) in zip(pattern, atoms):
            prob *= rj if bit else (1.0 - rj)
            if bit:
                occupied.append((pts, probs))
        if prob == 0.0:
            continue
        if not occupied:
            total += prob * float(gain_fn(np.zeros((0, 2))))
            continue
        index_iter = itertools.product(*[range(len(pr)) for _, pr in occupied])
        for idx in index_iter:
            atom_prob = prob
            points = np.empty((len(occupied), 2))
            for slot, (sel, (pts, probs)) in enumerate(zip(idx, occupied)):
                atom_prob *= probs[sel]
                points[slot] = pts[sel]
            total += atom_prob * float(gain_fn(points))
    return total


def discovered_conditional_gain(j: int, meas_phd, prior, sensor: SensorModel,
                                grid: CellGrid, quad: QuadratureSpec = QuadratureSpec(),
                                evaluator: GainEvaluator | None = None,
                                r_cell: float | None = None,
                                return_detail: bool = False):
    """Histogram quadrature of the single-measurement conditional gain.

    Cell samples are binned by log measurement intensity into at most r_max
    regions; one representative measurement per region (the sample nearest
    the region's mean intensity) carries the region's volume. When r_max
    reaches the sample count the full-lattice sum is used directly.
    """
    ev = evaluator if evaluator is not None else GainEvaluator(prior, sensor,
                                                               grid, quad)
    pts = grid.cell_lattice(j, quad.lattice)
    dvals = meas_phd.pdf(pts)
    eps_min = quad.resolve_eps_min(sensor.clutter_density)
    with np.errstate(divide="ignore"):
        logd = np.log(dvals)
    keep = logd >= eps_min
    if not keep.any():
        return (0.0, None) if return_detail else 0.0
    r_j = meas_phd.cell_mass(j) if r_cell is None else r_cell
    if r_j <= 0.0:
        return (0.0, None) if return_detail else 0.0

    kept_idx = np.flatnonzero(keep)

    if quad.r_max >= kept_idx.size:
        dv_q = grid.cell_area / quad.q
        gains = ev.single_measurement_gains(j, pts[kept_idx])
        value = float(gains @ (dvals[kept_idx] / r_j) * dv_q)
        if return_detail:
            detail = {"regions": [(int(ell),) for ell in kept_idx],
                      "reps": pts[kept_idx],
                      "volumes": np.full(kept_idx.size, dv_q)}
            return value, detail
        return value

    interior = grid.lattice_interior_mask(quad.lattice)
    interior_vals = logd[interior & np.isfinite(logd)]
    if interior_vals.size == 0:
        interior_vals = logd[np.isfinite(logd)]
    eps_lo = max(eps_min, float(interior_vals.min()))
    eps_hi = float(logd[keep].max())
    r_eff = quad.r_max
    if eps_hi <= eps_lo:
        # flat intensity: a single region
        edges = np.array([eps_lo, eps_hi])
        r_eff = 1
    else:
        edges = eps_lo + (np.arange(r_eff + 1) / r_eff) * (eps_hi - eps_lo)
    log_kept = logd[kept_idx]
    bins = np.searchsorted(edges[1:r_eff], log_kept, side="left")
    rep_list, weight_list = [], []
    regions, reps, volumes = [], [], []
    for i in range(r_eff):
        members = kept_idx[bins == i]
        if members.size == 0:
            continue
        mean_d = dvals[members].mean()
        rep = members[np.argmin(np.abs(dvals[members] - mean_d))]
        area = members.size / quad.q * grid.cell_area
        rep_list.append(rep)
        weight_list.append((dvals[rep] / r_j) * area)
        if return_detail:
            regions.append(tuple(int(m) for m in members))
            reps.append(pts[rep])
            volumes.append(area)
    gains = ev.single_measurement_gains(j, pts[np.array(rep_list)])
    value = float(gains @ np.array(weight_list))
    if return_detail:
        detail = {"regions": regions, "reps": np.array(reps),
                  "volumes": np.array(volumes)}
        return value, detail
    return value


class UndiscoveredGainTable:
    """Precomputed single-measurement gain for a uniform in-cell prior,
    interpolated over the expected count in [0, 1]. One table serves every
    cell of a uniform grid with the same detection probability."""

    def __init__(self, cell_size, sensor: SensorModel, p_d: float,
                 quad: QuadratureSpec, n_knots: int = 21):
        self.knots = np.linspace(0.0, 1.0, n_knots)
        local_grid = CellGrid(origin=(0.0, 0.0), cell_size=tuple(cell_size),
                              n_cols=1, n_rows=1)
        local_sensor = SensorModel(H=sensor.H, R=sensor.R, p_d=p_d,
                                   clutter_density=sensor.clutter_density)
        values = []
        for lam in self.knots:
            if lam <= 0.0:
                values.append(0.0)
                continue
            prior = PiecewisePhd(local_grid, np.array([lam]))
            meas = PiecewiseMeasurementPhd(prior, local_sensor,
                                           np.array([0]), local_grid)
            values.append(discovered_conditional_gain(
                0, meas, prior, local_sensor, local_grid, quad))
        self.values = np.array(values)

    def __call__(self, lam: float) -> float:
        lam = min(max(float(lam), 0.0), 1.0)
        return float(np.interp(lam, self.knots, self.values))


def undiscovered_conditional_gain_table(grid: CellGrid, sensor: SensorModel,
                                        p_d: float,
                                        quad: QuadratureSpec = QuadratureSpec(),
                                        n_knots: int = 21) -> UndiscoveredGainTable:
    return UndiscoveredGainTable(grid.cell_size, sensor, p_d, quad, n_knots)


class _TableCache:
    def __init__(self, grid: CellGrid, sensor: SensorModel, quad: QuadratureSpec):
        self.grid = grid
        self.sensor = sensor
        self.quad = quad
        self._tables: dict[float, UndiscoveredGainTable] = {}

    def value(self, lam: float, p_d: float) -> float:
        key = round(float(p_d), 12)
        table = self._tables.get(key)
        if table is None:
            table = undiscovered_conditional_gain_table(self.grid, self.sensor,
                                                        p_d, self.quad)
            self._tables[key] = table
        return table(lam)


def for_gain_arrays(discovered: GaussianMixturePhd, lambdas: np.ndarray,
                    sensor: SensorModel, grid: CellGrid,
                    quad: QuadratureSpec = QuadratureSpec(),
                    tables: _TableCache | None = None,
                    collect_diagnostics: bool = False):
    """Per-cell expected gains over the field of regard.

    For every FoR cell the discovered and undiscovered rewards combine a
    closed-form no-measurement term with a quadrature single-measurement term
    weighted by the cell's measurement-existence probability.
    """
    for_cells = np.flatnonzero(grid.for_mask)
    lambdas = np.asarray(lambdas, dtype=float)
    pd = sensor.p_d_cells(grid)
    und_prior = PiecewisePhd(grid, np.where(grid.roi_mask, lambdas, 0.0))

    meas_v = predicted_measurement_phd(discovered, for_cells, sensor, grid)
    meas_w = PiecewiseMeasurementPhd(und_prior, sensor, for_cells, grid)
    ev_d = GainEvaluator(discovered, sensor, grid, quad)
    ev_u = GainEvaluator(und_prior, sensor, grid, quad)
    if tables is None:
        tables = _TableCache(grid, sensor, quad)

    gains_d = np.zeros(grid.n_cells)
    gains_u = np.zeros(grid.n_cells)
    r_v = np.zeros(grid.n_cells)
    r_w = np.zeros(grid.n_cells)
    clipped = []
    for j in for_cells:
        rv = meas_v.cell_mass(j)
        rw = meas_w.cell_mass(j)
        if rv > 1.0 or rw > 1.0:
            clipped.append(int(j))
        rv = min(rv, 1.0)
        rw = min(rw, 1.0)
        r_v[j] = rv
        r_w[j] = rw

        if ev_d.cell_out_of_reach(j):
            # no discovered mass can fall in this cell: both terms vanish
            gains_d[j] = 0.0
        else:
            null_d = ev_d.null_gain(j)
            cond_d = discovered_conditional_gain(j, meas_v, discovered, sensor,
                                                 grid, quad, evaluator=ev_d,
                                                 r_cell=rv)
            gains_d[j] = null_d * (1.0 - rv) + cond_d * rv

        lam_j = und_prior.lambdas[j]
        null_u = undiscovered_null_gain(lam_j, pd[j], True)
        cond_u = tables.value(lam_j, pd[j])
        gains_u[j] = null_u * (1.0 - rw) + cond_u * rw

    arrays = GainArrays(discovered=gains_d, undiscovered=gains_u)
    if collect_diagnostics:
        diag = GainDiagnostics(
            r_discovered=r_v, r_undiscovered=r_w,
            overlap_violation=overlap_violation_fractions(discovered, sensor, grid),
            clipped_cells=clipped)
        return arrays, diag
    return arrays
