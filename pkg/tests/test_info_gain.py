import math

import numpy as np
import pytest
from scipy.special import xlogy

from swtsim.grid import CellGrid, Fov
from swtsim.info_gain import (GainEvaluator, MeasurementPhd, PiecewiseMeasurementPhd,
                              QuadratureSpec, brute_force_expected_gain,
                              cell_decompose_gain, discovered_conditional_gain,
                              expected_gain_cellmb, null_gain_coefficient,
                              overlap_violation_fractions, phd_kld_gain,
                              predicted_measurement_phd, pseudo_likelihood,
                              undiscovered_conditional_gain_table,
                              undiscovered_null_gain, for_gain_arrays)
from swtsim.rfs import (CellMb, DiscreteCellDensity, GaussianMixturePhd,
                        PiecewisePhd, phd_mass)
from swtsim.sensor import SensorModel
from swtsim.verify import (closed_form_expectation, make_cell_additive_gain,
                           random_cellmb_instance)


@pytest.fixture
def grid4():
    return CellGrid(origin=(0.0, 0.0), cell_size=(20.0, 20.0), n_cols=4, n_rows=1)


@pytest.fixture
def grid3x3():
    return CellGrid(origin=(0.0, 0.0), cell_size=(20.0, 20.0), n_cols=3, n_rows=3)


def _sensor(grid, sigma_z=2.0, p_d=0.9, clutter=5.0):
    return SensorModel.make(sigma_z=sigma_z, p_d=p_d, clutter_rate=clutter,
                            grid=grid, state_dim=2)


def _state_sensor(grid, sigma_z=2.0, p_d=0.9, clutter=5.0):
    return SensorModel.make(sigma_z=sigma_z, p_d=p_d, clutter_rate=clutter,
                            grid=grid, state_dim=5)


class TestPseudoLikelihood:
    def test_no_measurements_inside_fov(self, grid4):
        sensor = _sensor(grid4)
        prior = GaussianMixturePhd(np.array([0.5]), np.array([[10.0, 10.0]]),
                                   np.array([np.diag([4.0, 4.0])]))
        value = pseudo_likelihood(np.zeros((0, 2)), np.array([10.0, 10.0]),
                                  Fov(0, 0, 2, 1), prior, sensor, grid4)
        assert abs(value - 0.1) < 1e-12

    def test_outside_fov_is_one(self, grid4):
        sensor = _sensor(grid4)
        prior = GaussianMixturePhd(np.array([0.5]), np.array([[10.0, 10.0]]),
                                   np.array([np.diag([4.0, 4.0])]))
        value = pseudo_likelihood(np.array([[70.0, 10.0]]),
                                  np.array([70.0, 10.0]),
                                  Fov(0, 0, 2, 1), prior, sensor, grid4)
        assert value == 1.0

    def test_single_measurement_matches_dense_grid_oracle(self, grid4):
        sensor = _sensor(grid4, sigma_z=2.0, clutter=3.0)
        prior = GaussianMixturePhd(np.array([0.7]), np.array([[12.0, 9.0]]),
                                   np.array([np.diag([9.0, 6.0])]))
        fov = Fov(0, 0, 2, 1)
        z = np.array([[13.0, 10.0]])
        x = np.array([11.0, 10.5])
        value = pseudo_likelihood(z, x, fov, prior, sensor, grid4)

        # independent evaluation: fine midpoint grid for the denominator
        lo = np.array([0.0, 0.0])
        hi = np.array([40.0, 20.0])
        nx, ny = 1600, 800
        xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
        ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        dens = prior.pdf(pts)
        lik = np.exp(-0.5 * np.sum((pts - z[0]) ** 2, axis=1) / 4.0) / (2 * math.pi * 4.0)
        dv = (hi - lo).prod() / (nx * ny)
        denom = sensor.clutter_density + 0.9 * float(np.sum(dens * lik)) * dv
        g_x = math.exp(-0.5 * np.sum((x - z[0]) ** 2) / 4.0) / (2 * math.pi * 4.0)
        expect = 1.0 - 0.9 + 0.9 * g_x / denom
        assert abs(value - expect) < 1e-6

    def test_zero_denominator_raises(self, grid4):
        sensor = SensorModel(H=np.eye(2), R=4.0 * np.eye(2), p_d=0.9,
                             clutter_density=0.0)
        prior = GaussianMixturePhd.empty(2)
        with pytest.raises(ValueError, match="degenerate"):
            pseudo_likelihood(np.array([[5.0, 5.0]]), np.array([5.0, 5.0]),
                              Fov(0, 0, 1, 1), prior, sensor, grid4)


class TestPhdKldGain:
    def test_empty_region_is_zero(self, grid4):
        sensor = _sensor(grid4)
        prior = GaussianMixturePhd(np.array([0.5]), np.array([[10.0, 10.0]]),
                                   np.array([np.diag([4.0, 4.0])]))
        assert phd_kld_gain(np.zeros((0, 2)), [], prior, sensor, grid4) == 0.0

    def test_no_measurement_closed_form(self, grid4):
        sensor = _sensor(grid4, p_d=0.8)
        prior = GaussianMixturePhd(np.array([0.6]), np.array([[10.0, 10.0]]),
                                   np.array([np.diag([4.0, 4.0])]))
        fov = Fov(0, 0, 2, 1)
        value = phd_kld_gain(np.zeros((0, 2)), fov, prior, sensor, grid4)
        mass = sum(phd_mass(prior, grid4, j) for j in fov.cells(grid4))
        expect = mass * null_gain_coefficient(0.8)
        assert abs(value - expect) < 1e-9

    def test_single_measurement_matches_monte_carlo(self, grid3x3):
        sensor = _state_sensor(grid3x3, sigma_z=2.0, clutter=4.0)
        rng = np.random.default_rng(5)
        prior = GaussianMixturePhd(
            np.array([0.6, 0.4]),
            np.array([[25.0, 30.0, 0, 0, 0], [35.0, 28.0, 0, 0, 0]]),
            np.array([np.diag([7.0, 5.0, 1, 1, 0.01]),
                      np.diag([4.0, 9.0, 1, 1, 0.01])]))
        fov = Fov(0, 0, 3, 3)
        z = np.array([[27.0, 29.0]])
        value = phd_kld_gain(z, fov, prior, sensor, grid3x3)

        # Monte-Carlo oracle evaluated from the defining integrand
        marg = prior.position_marginal()
        mass = marg.mass
        n = 1_000_000
        comp = rng.choice(2, size=n, p=marg.weights / mass)
        samples = np.empty((n, 2))
        for c in range(2):
            sel = comp == c
            samples[sel] = rng.multivariate_normal(marg.means[c], marg.covs[c],
                                                   size=int(sel.sum()))
        denom = sensor.clutter_density + GainEvaluator(
            prior, sensor, grid3x3).denominator(z[0], fov.cells(grid3x3))
        lik = np.exp(-0.5 * np.sum((samples - z[0]) ** 2, axis=1) / 4.0) / (2 * math.pi * 4.0)
        in_grid = np.all((samples >= 0.0) & (samples <= 60.0), axis=1)
        ell = np.where(in_grid, 0.1 + 0.9 * lik / denom, 1.0)
        values = 1.0 - ell + xlogy(ell, ell)
        mc = mass * values.mean()
        mc_sigma = mass * values.std(ddof=1) / math.sqrt(n)
        assert abs(value - mc) < 3 * mc_sigma

    def test_nonnegative_on_random_inputs(self, grid4):
        rng = np.random.default_rng(12)
        sensor = _sensor(grid4, clutter=2.0)
        for _ in range(10):
            prior = GaussianMixturePhd(
                rng.uniform(0.1, 0.7, 2),
                rng.uniform([5, 5], [75, 15], size=(2, 2)),
                np.array([np.diag(rng.uniform(2, 8, 2)) for _ in range(2)]))
            n_z = rng.integers(0, 3)
            z = rng.uniform([0, 0], [80, 20], size=(n_z, 2))
            value = phd_kld_gain(z, np.arange(4), prior, sensor, grid4)
            assert value >= -1e-9


class TestCellDecomposition:
    def test_confined_prior_leaves_other_cells_at_zero(self, grid4):
        sensor = _sensor(grid4, sigma_z=1.0, clutter=1.0)
        prior = GaussianMixturePhd(np.array([0.5]), np.array([[30.0, 10.0]]),
                                   np.array([np.diag([1.0, 1.0])]))
        z = np.array([[30.0, 10.0]])
        gains = cell_decompose_gain(z, np.arange(4), prior, sensor, grid4)
        assert gains[1] > 0.0
        np.testing.assert_allclose(gains[[0, 2, 3]], 0.0, atol=1e-9)

    def test_separated_components_sum_to_joint(self, grid4):
        sensor = _sensor(grid4, sigma_z=1.0, clutter=2.0)
        prior = GaussianMixturePhd(
            np.array([0.5, 0.5]),
            np.array([[10.0, 10.0], [50.0, 10.0]]),
            np.array([np.diag([1.44, 1.44])] * 2))
        z = np.array([[11.0, 9.5], [49.0, 11.0]])
        joint = phd_kld_gain(z, np.arange(4), prior, sensor, grid4)
        split = cell_decompose_gain(z, np.arange(4), prior, sensor, grid4)
        assert abs(split.sum() - joint) <= 1e-6 * abs(joint)

    def test_straddling_component_error_bounded_by_violation(self, grid4):
        sensor = _sensor(grid4, sigma_z=2.0, clutter=2.0)
        prior = GaussianMixturePhd(
            np.array([0.5, 0.5]),
            np.array([[20.0, 10.0], [50.0, 10.0]]),
            np.array([np.diag([9.0, 9.0]), np.diag([1.44, 1.44])]))
        z = np.array([[18.0, 10.0], [49.0, 11.0]])
        joint = phd_kld_gain(z, np.arange(4), prior, sensor, grid4)
        split = cell_decompose_gain(z, np.arange(4), prior, sensor, grid4)
        err = abs(split.sum() - joint) / abs(joint)
        violation = overlap_violation_fractions(prior, sensor, grid4).max()
        assert err > 0.0
        assert err <= violation


class TestExpectedGainCombination:
    def test_all_empty_cells(self):
        value = expected_gain_cellmb(np.zeros(2), np.array([1.5, 2.5]),
                                     np.array([9.0, 9.0]))
        assert value == 4.0

    def test_certain_measurement_in_first_cell(self):
        value = expected_gain_cellmb(np.array([1.0, 0.0]), np.array([7.0, 2.0]),
                                     np.array([3.0, 9.0]))
        assert value == 3.0 + 2.0

    def test_matches_enumeration_for_three_cells(self):
        rng = np.random.default_rng(23)
        grid, cellmb, prior, sensor = random_cellmb_instance(rng, 3)
        gain_fn, cell_value, null_cache = make_cell_additive_gain(prior, sensor, grid)
        closed = closed_form_expectation(cellmb, cell_value, null_cache)
        brute = brute_force_expected_gain(cellmb, gain_fn)
        assert abs(closed - brute) <= 1e-8 * (1.0 + abs(brute))


class TestBruteForceExpectation:
    def test_constant_gain_returns_constant(self):
        rng = np.random.default_rng(3)
        _, cellmb, _, _ = random_cellmb_instance(rng, 3)
        value = brute_force_expected_gain(cellmb, lambda z: 4.25)
        assert abs(value - 4.25) < 1e-12

    def test_cardinality_gain_returns_sum_of_existence(self):
        rng = np.random.default_rng(4)
        _, cellmb, _, _ = random_cellmb_instance(rng, 4)
        value = brute_force_expected_gain(cellmb, lambda z: float(len(z)))
        assert abs(value - cellmb.r.sum()) < 1e-12

    def test_refuses_large_grids(self):
        grid = CellGrid(origin=(0, 0), cell_size=(10, 10), n_cols=7, n_rows=1)
        cellmb = CellMb(grid, np.zeros(7), tuple([None] * 7))
        with pytest.raises(ValueError, match="> 6"):
            brute_force_expected_gain(cellmb, lambda z: 0.0)

    def test_theorem_equivalence_on_random_instances(self):
        rng = np.random.default_rng(6)
        for n_cells in (2, 3, 4):
            grid, cellmb, prior, sensor = random_cellmb_instance(rng, n_cells)
            gain_fn, cell_value, null_cache = make_cell_additive_gain(
                prior, sensor, grid)
            closed = closed_form_expectation(cellmb, cell_value, null_cache)
            brute = brute_force_expected_gain(cellmb, gain_fn)
            assert abs(closed - brute) <= 1e-6 * (1.0 + abs(brute))


class TestUndiscoveredNullGain:
    def test_zero_detection_probability(self):
        assert undiscovered_null_gain(1.0, 0.0, True) == 0.0

    def test_perfect_detection_limit(self):
        assert abs(undiscovered_null_gain(0.5, 1.0, True) - 0.5) < 1e-15

    def test_standard_value(self):
        expect = 0.9 + 0.1 * math.log(0.1)
        assert abs(undiscovered_null_gain(1.0, 0.9, True) - expect) < 1e-9

    def test_uncovered_cell_contributes_nothing(self):
        assert undiscovered_null_gain(1.0, 0.9, False) == 0.0


@pytest.fixture(scope="module")
def table():
    grid = CellGrid(origin=(0, 0), cell_size=(20.0, 20.0), n_cols=2, n_rows=2)
    sensor = _sensor(grid, sigma_z=2.0, p_d=0.9, clutter=5.0)
    return undiscovered_conditional_gain_table(grid, sensor, p_d=0.9,
                                               quad=QuadratureSpec(lattice=(16, 16)))


class TestUndiscoveredTable:

    def test_zero_count_knot_is_zero_and_nonnegative(self, table):
        # direct quadrature with zero prior intensity integrates to zero
        assert table(0.0) == 0.0
        assert np.all(table.values >= 0.0)

    def test_knot_reproduction(self, table):
        for lam, value in zip(table.knots, table.values):
            assert table(float(lam)) == pytest.approx(value, abs=0.0)

    def test_midpoint_bounded_by_bracket(self, table):
        mid = 0.5 * (table.knots[4] + table.knots[5])
        lo = min(table.values[4], table.values[5])
        hi = max(table.values[4], table.values[5])
        assert lo <= table(float(mid)) <= hi

    def test_queries_clamp_to_unit_interval(self, table):
        assert table(-0.5) == table(0.0)
        assert table(1.7) == table(1.0)


class TestDiscoveredConditionalGain:
    def test_flat_intensity_degenerates_to_single_region(self, grid4):
        sensor = _sensor(grid4, clutter=5.0)
        prior = PiecewisePhd(grid4, np.array([0.0, 0.5, 0.0, 0.0]))
        # clutter-only measurement intensity: exactly flat inside the cell
        meas = MeasurementPhd(GaussianMixturePhd.empty(2),
                              sensor.clutter_density, np.array([1]), grid4)
        quad = QuadratureSpec(lattice=(16, 16), r_max=8)
        value, detail = discovered_conditional_gain(
            1, meas, prior, sensor, grid4, quad, return_detail=True)
        assert len(detail["regions"]) == 1
        rep = detail["reps"][0]
        single = phd_kld_gain(rep[None, :], [1], prior, sensor, grid4, quad)
        # flat density: representative weight times volume is exactly one
        assert abs(value - single) < 1e-9

    def test_volumes_never_exceed_cell_area(self, grid3x3):
        sensor = _state_sensor(grid3x3, clutter=0.1)
        prior = GaussianMixturePhd(
            np.array([0.8]), np.array([[30.0, 30.0, 0, 0, 0]]),
            np.array([np.diag([6.0, 6.0, 1, 1, 0.01])]))
        meas = predicted_measurement_phd(prior, np.arange(9), sensor, grid3x3)
        quad = QuadratureSpec(lattice=(16, 16), r_max=8)
        for j in (0, 4):
            _, detail = discovered_conditional_gain(
                j, meas, prior, sensor, grid3x3, quad, return_detail=True)
            if detail is None:
                continue
            assert detail["volumes"].sum() <= grid3x3.cell_area + 1e-9

    def test_volume_equality_when_nothing_below_floor(self, grid3x3):
        # with clutter everywhere no sample falls below the intensity floor
        sensor = _state_sensor(grid3x3, clutter=5.0)
        prior = GaussianMixturePhd(
            np.array([0.8]), np.array([[30.0, 30.0, 0, 0, 0]]),
            np.array([np.diag([6.0, 6.0, 1, 1, 0.01])]))
        meas = predicted_measurement_phd(prior, np.arange(9), sensor, grid3x3)
        quad = QuadratureSpec(lattice=(16, 16), r_max=8)
        _, detail = discovered_conditional_gain(
            4, meas, prior, sensor, grid3x3, quad, return_detail=True)
        assert abs(detail["volumes"].sum() - grid3x3.cell_area) < 1e-9

    def test_full_region_budget_reproduces_lattice_sum(self, grid3x3):
        sensor = _state_sensor(grid3x3, clutter=5.0)
        prior = GaussianMixturePhd(
            np.array([0.8]), np.array([[28.0, 26.0, 1.0, 0, 0]]),
            np.array([np.diag([6.0, 5.0, 1, 1, 0.01])]))
        meas = predicted_measurement_phd(prior, np.arange(9), sensor, grid3x3)
        quad = QuadratureSpec(lattice=(8, 8), r_max=64)
        value = discovered_conditional_gain(4, meas, prior, sensor, grid3x3, quad)
        # manual full-lattice combination of the same single-measurement gains
        pts = grid3x3.cell_lattice(4, (8, 8))
        dvals = meas.pdf(pts)
        r_j = meas.cell_mass(4)
        dv = grid3x3.cell_area / 64
        ref = sum(phd_kld_gain(p[None, :], [4], prior, sensor, grid3x3, quad)
                  * (d / r_j) * dv for p, d in zip(pts, dvals))
        assert abs(value - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_refining_regions_converges_to_lattice_reference(self, grid3x3):
        sensor = _state_sensor(grid3x3, clutter=5.0)
        prior = GaussianMixturePhd(
            np.array([0.6, 0.4]),
            np.array([[26.0, 28.0, 0, 0, 0], [35.0, 34.0, 0, 0, 0]]),
            np.array([np.diag([9.0, 9.0, 1, 1, 0.01]),
                      np.diag([4.0, 4.0, 1, 1, 0.01])]))
        meas = predicted_measurement_phd(prior, np.arange(9), sensor, grid3x3)
        ref = discovered_conditional_gain(
            4, meas, prior, sensor, grid3x3,
            QuadratureSpec(lattice=(32, 32), r_max=1024))
        errs = []
        for r_max in (4, 16, 64):
            val = discovered_conditional_gain(
                4, meas, prior, sensor, grid3x3,
                QuadratureSpec(lattice=(32, 32), r_max=r_max))
            errs.append(abs(val - ref) / abs(ref))
        assert errs[-1] < 0.02
        assert errs[-1] <= errs[0]


class TestPredictedMeasurementPhd:
    def test_empty_prior_gives_clutter_only(self, grid4):
        sensor = _state_sensor(grid4, clutter=5.0)
        meas = predicted_measurement_phd(GaussianMixturePhd.empty(5),
                                         np.arange(4), sensor, grid4)
        pts = np.array([[10.0, 10.0], [30.0, 5.0]])
        np.testing.assert_allclose(meas.pdf(pts), sensor.clutter_density)

    def test_single_component_pushes_through(self, grid4):
        sensor = _state_sensor(grid4, sigma_z=2.0, p_d=0.9, clutter=0.0)
        prior = GaussianMixturePhd(
            np.ones(1), np.array([[10.0, 10.0, 1.0, 0.0, 0.0]]),
            np.array([np.diag([4.0, 4.0, 1.0, 1.0, 0.01])]))
        meas = predicted_measurement_phd(prior, np.arange(4), sensor, grid4)
        assert meas.gm.n_components == 1
        assert abs(meas.gm.weights[0] - 0.9) < 1e-12
        np.testing.assert_allclose(meas.gm.means[0], [10.0, 10.0])
        np.testing.assert_allclose(meas.gm.covs[0], np.diag([8.0, 8.0]))

    def test_fov_mass_balance(self, grid4):
        sensor = _state_sensor(grid4, sigma_z=2.0, p_d=0.9, clutter=5.0)
        prior = GaussianMixturePhd(
            np.array([1.0]), np.array([[10.0, 10.0, 0, 0, 0]]),
            np.array([np.diag([4.0, 4.0, 1, 1, 0.01])]))
        fov = Fov(0, 0, 2, 1)
        cells = fov.cells(grid4)
        meas = predicted_measurement_phd(prior, cells, sensor, grid4)
        meas_mass = sum(meas.cell_mass(j) for j in cells)
        prior_mass = sum(phd_mass(prior, grid4, j) for j in cells)
        expect = 0.9 * prior_mass + sensor.clutter_density * fov.area(grid4)
        assert abs(meas_mass - expect) < 1e-3

    def test_out_of_region_component_dropped(self, grid4):
        sensor = _state_sensor(grid4, p_d=0.9, clutter=1.0)
        prior = GaussianMixturePhd(
            np.ones(1), np.array([[70.0, 10.0, 0, 0, 0]]),
            np.array([np.diag([4.0, 4.0, 1, 1, 0.01])]))
        meas = predicted_measurement_phd(prior, np.array([0, 1]), sensor, grid4)
        assert meas.gm.n_components == 0


class TestForGainArrays:
    def test_masked_cells_contribute_nothing(self):
        mask = np.ones(9, dtype=bool)
        mask[0] = False
        grid = CellGrid(origin=(0, 0), cell_size=(20, 20), n_cols=3, n_rows=3,
                        for_mask=mask)
        sensor = _state_sensor(grid, clutter=2.0)
        lambdas = np.full(9, 0.1)
        arrays = for_gain_arrays(GaussianMixturePhd.empty(5), lambdas, sensor,
                                 grid, QuadratureSpec(lattice=(8, 8)))
        assert arrays.discovered[0] == 0.0
        assert arrays.undiscovered[0] == 0.0
        # no tracks: discovered entries are small and clutter-driven
        assert np.all(arrays.discovered[mask] < 0.05)

    def test_uniform_field_is_constant_over_equivalent_cells(self):
        # interior cells of a uniform scene share neighborhood geometry, so
        # their search gains must coincide
        grid = CellGrid(origin=(0, 0), cell_size=(20, 20), n_cols=5, n_rows=5)
        sensor = _state_sensor(grid, clutter=2.0)
        lambdas = np.full(25, 0.1)
        arrays = for_gain_arrays(GaussianMixturePhd.empty(5), lambdas, sensor,
                                 grid, QuadratureSpec(lattice=(8, 8)))
        interior = [r * 5 + c for r in (1, 2, 3) for c in (1, 2, 3)]
        values = arrays.undiscovered[interior]
        np.testing.assert_allclose(values, values[0], rtol=1e-9)

    def test_confident_track_dominates_its_cell(self, grid3x3):
        sensor = _state_sensor(grid3x3, clutter=1.0)
        prior = GaussianMixturePhd(
            np.array([0.95]), np.array([[50.0, 30.0, 1.0, 0, 0]]),
            np.array([np.diag([5.0, 5.0, 1, 1, 0.01])]))
        lambdas = np.full(9, 0.05)
        arrays = for_gain_arrays(prior, lambdas, sensor, grid3x3,
                                 QuadratureSpec(lattice=(16, 16)))
        cell = grid3x3.cell_of((50.0, 30.0))
        others = np.delete(arrays.discovered, cell)
        assert arrays.discovered[cell] > others.max()
