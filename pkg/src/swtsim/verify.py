"""Self-contained oracle suites: enumeration and closed-form cross-checks.

Each suite returns CheckResult rows; the CLI `verify` subcommand prints one
pass/fail line per check. Tolerances live in a module-level table so a
deliberately tampered tolerance fails loudly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .gaussians import rect_mass
from .grid import CellGrid
from .info_gain import (GainEvaluator, QuadratureSpec, brute_force_expected_gain,
                        cell_decompose_gain, expected_gain_cellmb,
                        null_gain_coefficient, overlap_violation_fractions,
                        phd_kld_gain, undiscovered_null_gain)
from .metrics import GospaParams, gospa
from .rfs import (CellMb, DiscreteCellDensity, GaussianMixturePhd, PiecewisePhd,
                  fit_cell_mb, phd_mass)
from .sensor import SensorModel

TOLERANCES = {
    "thm1": 1e-6,
    "prop1_r": 1e-9,
    "prop1_phd": 1e-9,
    "additivity": 1e-6,
    "nullgain": 1e-9,
    "nullgain_quadrature": 1e-6,
    "gospa": 1e-9,
}


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    error: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.suite}/{self.name}: "
                f"max_error={self.error:.3e} tol={self.tolerance:.1e}")


def _small_grid(n_cols: int, cell: float = 20.0) -> CellGrid:
    return CellGrid(origin=(0.0, 0.0), cell_size=(cell, cell),
                    n_cols=n_cols, n_rows=1)


def random_cellmb_instance(rng: np.random.Generator, n_cells: int,
                           atoms_shape=(2, 3)):
    """Random cell multi-Bernoulli with piecewise (atomic) spatial densities,
    plus a mixture prior and sensor for gain evaluation on the same grid."""
    grid = _small_grid(n_cells)
    r = rng.uniform(0.0, 0.9, size=n_cells)
    spatial = []
    for j in range(n_cells):
        lo, hi = grid.cell_bounds(j)
        pts = grid.cell_lattice(j, atoms_shape)
        probs = rng.uniform(0.1, 1.0, size=pts.shape[0])
        spatial.append(DiscreteCellDensity(lo, hi, pts, probs))
    cellmb = CellMb(grid, r, tuple(spatial))

    weights, means, covs = [], [], []
    for j in range(n_cells):
        lo, hi = grid.cell_bounds(j)
        for _ in range(rng.integers(1, 3)):
            weights.append(rng.uniform(0.2, 0.8))
            means.append(rng.uniform(lo + 4.0, hi - 4.0))
            covs.append(np.diag(rng.uniform(2.0, 9.0, size=2)))
    prior = GaussianMixturePhd(np.array(weights), np.array(means), np.array(covs))
    sensor = SensorModel(H=np.eye(2), R=4.0 * np.eye(2), p_d=0.85,
                         clutter_density=3.0 / (grid.n_cells * grid.cell_area))
    return grid, cellmb, prior, sensor


def make_cell_additive_gain(prior, sensor, grid,
                            quad: QuadratureSpec = QuadratureSpec(lattice=(8, 8))):
    """Cell-additive set function: sum of per-cell single-FoV gains, with
    per-cell results memoized so enumeration oracles stay fast."""
    ev = GainEvaluator(prior, sensor, grid, quad)
    null_cache = {j: ev.null_gain(j) for j in range(grid.n_cells)}
    cache: dict = {}

    def cell_value(j: int, z: np.ndarray) -> float:
        key = (j, round(float(z[0]), 9), round(float(z[1]), 9))
        if key not in cache:
            denom = ev.denominators(z[None, :], np.array([j]))
            cache[key] = ev.cell_gain(j, z[None, :], denom)
        return cache[key]

    def gain_fn(z_points: np.ndarray) -> float:
        z = np.atleast_2d(z_points) if len(z_points) else np.zeros((0, 2))
        cells = grid.cells_of(z) if z.shape[0] else np.zeros(0, dtype=int)
        total = 0.0
        for j in range(grid.n_cells):
            members = z[cells == j]
            if members.shape[0] == 0:
                total += null_cache[j]
            else:
                # cell-additive by construction: one measurement per cell
                total += cell_value(j, members[0])
        return total

    return gain_fn, cell_value, null_cache


def closed_form_expectation(cellmb: CellMb, cell_value, null_cache) -> float:
    """Existence-weighted combination of null and conditional gains, the
    conditional term taken over each cell's spatial atoms."""
    r = cellmb.r
    nulls = np.array([null_cache[j] for j in range(cellmb.grid.n_cells)])
    conds = np.zeros(cellmb.grid.n_cells)
    for j, dens in enumerate(cellmb.spatial):
        if dens is None or r[j] <= 0.0:
            continue
        pts, probs = dens.atoms(None)
        conds[j] = sum(p * cell_value(j, z) for z, p in zip(pts, probs))
    return expected_gain_cellmb(r, nulls, conds)


def suite_thm1(n_instances: int = 20, seed: int = 7,
               sizes=(2, 3, 4)) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    tol = TOLERANCES["thm1"]
    worst = 0.0
    start = time.time()
    for i in range(n_instances):
        n_cells = int(sizes[i % len(sizes)])
        grid, cellmb, prior, sensor = random_cellmb_instance(rng, n_cells)
        gain_fn, cell_value, null_cache = make_cell_additive_gain(prior, sensor, grid)
        brute = brute_force_expected_gain(cellmb, gain_fn)
        closed = closed_form_expectation(cellmb, cell_value, null_cache)
        err = abs(closed - brute) / (1.0 + abs(brute))
        worst = max(worst, err)
    elapsed = time.time() - start
    return [CheckResult("thm1", f"expectation_{n_instances}x", worst <= tol,
                        worst, tol),
            CheckResult("thm1", "runtime_s", elapsed < 60.0, elapsed, 60.0)]


def suite_prop1(n_instances: int = 10, seed: int = 11) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = CellGrid(origin=(0.0, 0.0), cell_size=(20.0, 20.0), n_cols=4, n_rows=4)
    tol_r = TOLERANCES["prop1_r"]
    tol_phd = TOLERANCES["prop1_phd"]
    worst_r = 0.0
    worst_phd = 0.0
    for _ in range(n_instances):
        n = rng.integers(2, 6)
        weights = rng.uniform(0.05, 0.5, size=n)
        means = rng.uniform([10, 10], [70, 70], size=(n, 2))
        covs = np.array([np.diag(rng.uniform(4.0, 25.0, size=2)) for _ in range(n)])
        phd = GaussianMixturePhd(weights, means, covs)
        fitted = fit_cell_mb(phd, grid)
        for j in range(grid.n_cells):
            worst_r = max(worst_r, abs(fitted.r[j] - phd_mass(phd, grid, j)))
        pts = np.vstack([grid.cell_lattice(j, (5, 5)) for j in range(grid.n_cells)])
        rebuilt = fitted.pdf(pts)
        direct = phd.pdf(pts)
        mask = np.array([fitted.r[grid.cell_of(p)] >= 1e-12 for p in pts])
        worst_phd = max(worst_phd, float(np.max(np.abs(rebuilt[mask] - direct[mask]))))
    return [CheckResult("prop1", "cell_masses", worst_r <= tol_r, worst_r, tol_r),
            CheckResult("prop1", "phd_match", worst_phd <= tol_phd, worst_phd,
                        tol_phd)]


def _additivity_setup(separated: bool):
    grid = CellGrid(origin=(0.0, 0.0), cell_size=(20.0, 20.0), n_cols=4, n_rows=1)
    if separated:
        means = np.array([[10.0, 10.0], [50.0, 10.0], [70.0, 12.0]])
        covs = np.array([np.diag([1.44, 1.44]) for _ in means])
        sigma_z2 = 1.0
        z = np.array([[11.0, 9.5], [49.0, 11.0]])
    else:
        # first component straddles the cell edge at x = 20; the measurement
        # sits by the edge so its likelihood reaches both cells
        means = np.array([[20.0, 10.0], [50.0, 10.0]])
        covs = np.array([np.diag([9.0, 9.0]), np.diag([1.44, 1.44])])
        sigma_z2 = 4.0
        z = np.array([[18.0, 10.0], [49.0, 11.0]])
    weights = np.full(means.shape[0], 0.5)
    prior = GaussianMixturePhd(weights, means, covs)
    sensor = SensorModel(H=np.eye(2), R=sigma_z2 * np.eye(2), p_d=0.9,
                         clutter_density=2.0 / (grid.n_cells * grid.cell_area))
    return grid, prior, sensor, z


def suite_additivity() -> list[CheckResult]:
    tol = TOLERANCES["additivity"]
    out = []
    grid, prior, sensor, z = _additivity_setup(separated=True)
    cells = np.arange(grid.n_cells)
    joint = phd_kld_gain(z, cells, prior, sensor, grid)
    percell = cell_decompose_gain(z, cells, prior, sensor, grid)
    err = abs(percell.sum() - joint) / abs(joint)
    out.append(CheckResult("additivity", "separated", err <= tol, err, tol))

    grid, prior, sensor, z = _additivity_setup(separated=False)
    joint = phd_kld_gain(z, cells, prior, sensor, grid)
    percell = cell_decompose_gain(z, cells, prior, sensor, grid)
    err = abs(percell.sum() - joint) / abs(joint)
    violation = float(overlap_violation_fractions(prior, sensor, grid).max())
    out.append(CheckResult("additivity", "violation_bounds_error",
                           err <= violation, err, violation))
    return out


def suite_nullgain() -> list[CheckResult]:
    tol = TOLERANCES["nullgain"]
    closed = undiscovered_null_gain(1.0, 0.9, True)
    expect = 0.9 + 0.1 * math.log(0.1)
    err = abs(closed - expect)
    out = [CheckResult("nullgain", "closed_form", err <= tol, err, tol)]

    # inhomogeneous detection profile: compare the general integral form
    # against dense numerical quadrature of p + (1-p) log(1-p)
    tol_q = TOLERANCES["nullgain_quadrature"]
    xs = np.linspace(0.0, 1.0, 20001)
    p_of_x = 0.5 + 0.4 * np.sin(2.0 * math.pi * xs)
    integrand = p_of_x + (1.0 - p_of_x) * np.log1p(-p_of_x)
    dense = np.trapz(integrand, xs)
    coeffs = np.array([null_gain_coefficient(p) for p in p_of_x])
    piecewise = np.trapz(coeffs, xs)
    err_q = abs(dense - piecewise)
    out.append(CheckResult("nullgain", "inhomogeneous_quadrature",
                           err_q <= tol_q, err_q, tol_q))
    return out


def suite_gospa(seed: int = 5) -> list[CheckResult]:
    tol = TOLERANCES["gospa"]
    params = GospaParams(cutoff=20.0, order=2.0)
    out = []

    result = gospa(np.zeros((0, 2)), np.array([[5.0, 5.0]]), params)
    err = abs(result.total - math.sqrt(200.0))
    out.append(CheckResult("gospa", "one_missed_penalty", err <= tol, err, tol))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        n_t = int(rng.integers(0, 5))
        n_e = int(rng.integers(0, 5))
        truth = rng.uniform(0, 100, size=(n_t, 2))
        est = rng.uniform(0, 100, size=(n_e, 2))
        res = gospa(est, truth, params)
        brute = _gospa_brute(est, truth, params)
        worst = max(worst, abs(res.total - brute))
        decomp = (res.localization ** params.order
                  + params.cutoff ** params.order / 2.0
                  * (res.n_missed + res.n_false))
        worst = max(worst, abs(res.total ** params.order - decomp))
    out.append(CheckResult("gospa", "brute_force_and_decomposition",
                           worst <= tol, worst, tol))
    return out


def _gospa_brute(est: np.ndarray, truth: np.ndarray, params: GospaParams) -> float:
    """Exhaustive assignment enumeration for small instances."""
    import itertools
    c, p = params.cutoff, params.order
    n_t, n_e = len(truth), len(est)
    best = math.inf
    indices = list(range(n_e))
    for k in range(0, min(n_t, n_e) + 1):
        for t_sel in itertools.combinations(range(n_t), k):
            for e_sel in itertools.permutations(indices, k):
                cost = sum(min(np.linalg.norm(truth[t] - est[e]), c) ** p
                           for t, e in zip(t_sel, e_sel))
                cost += (c ** p / 2.0) * ((n_t - k) + (n_e - k))
                best = min(best, cost)
    return best ** (1.0 / p)


SUITES = {
    "thm1": suite_thm1,
    "prop1": suite_prop1,
    "additivity": suite_additivity,
    "nullgain": suite_nullgain,
    "gospa": suite_gospa,
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        results = []
        for suite in SUITES.values():
            results.extend(suite())
        return results
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
