"""Information-driven sensor FoV control for multi-object search-while-tracking."""

from .control import Policy, select_fov_cellmb, select_fov_pims, select_fov_random
from .filters import (Track, TrackSet, TrackerParams, UndiscoveredModel,
                      diffusion_transition, discovered_phd, extract_estimates,
                      predict_tracks, predict_undiscovered, split_for_fov,
                      update_tracks, update_undiscovered)
from .grid import CellGrid, Fov, admissible_fovs, fov_cells
from .info_gain import (GainArrays, QuadratureSpec, brute_force_expected_gain,
                        cell_decompose_gain, discovered_conditional_gain,
                        expected_gain_cellmb, for_gain_arrays, phd_kld_gain,
                        predicted_measurement_phd, pseudo_likelihood,
                        undiscovered_conditional_gain_table,
                        undiscovered_null_gain)
from .metrics import GospaParams, GospaResult, gospa
from .motion import MotionModel, ct_transition, ut_predict
from .rfs import (CellMb, GaussianMixturePhd, PiecewisePhd, PoissonRfs,
                  SupportError, fit_cell_mb, kld_poisson, phd_mass)
from .scenario import default_desk_scenario, load_scenario, scenario_from_dict
from .sensor import SensorModel
from .sim import (ObjectScript, Scenario, StepRecord, propagate_truth,
                  rng_stream, run_experiment, synthesize_measurements)

__version__ = "0.1.0"
