"""Scenario configuration: YAML loading, validation, and built-in defaults.

The file format is documented in docs/scenario_schema.md; two committed
examples live under scenarios/.
"""

from __future__ import annotations

import numpy as np
import yaml

from .control import Policy
from .filters import TrackerParams, UndiscoveredModel, diffusion_transition
from .grid import CellGrid
from .info_gain import QuadratureSpec
from .metrics import GospaParams
from .motion import MotionModel
from .sensor import SensorModel
from .sim import ObjectScript, Scenario


class ScenarioError(ValueError):
    """Raised when a scenario file is malformed."""


def _mask_from_spec(spec, grid_cols: int, grid_rows: int) -> np.ndarray:
    n = grid_cols * grid_rows
    if spec is None or spec == "all":
        return np.ones(n, dtype=bool)
    mask = np.zeros(n, dtype=bool)
    for entry in spec:
        col, row = int(entry[0]), int(entry[1])
        if not (0 <= col < grid_cols and 0 <= row < grid_rows):
            raise ScenarioError(f"mask cell [{col}, {row}] outside the grid")
        mask[row * grid_cols + col] = True
    return mask


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise ScenarioError(f"missing key {key!r} in {context}")
    return table[key]


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    gtab = _require(doc, "grid", "scenario")
    cols = int(_require(gtab, "cols", "grid"))
    rows = int(_require(gtab, "rows", "grid"))
    grid = CellGrid(
        origin=tuple(float(v) for v in gtab.get("origin", (0.0, 0.0))),
        cell_size=tuple(float(v) for v in _require(gtab, "cell_size", "grid")),
        n_cols=cols, n_rows=rows,
        roi_mask=_mask_from_spec(gtab.get("roi", "all"), cols, rows),
        for_mask=_mask_from_spec(gtab.get("for", "all"), cols, rows))

    stab = _require(doc, "sensor", "scenario")
    sensor = SensorModel.make(
        sigma_z=float(_require(stab, "sigma_z", "sensor")),
        p_d=float(_require(stab, "p_d", "sensor")),
        clutter_rate=float(_require(stab, "clutter_per_frame", "sensor")),
        grid=grid)

    mtab = _require(doc, "motion", "scenario")
    motion = MotionModel(
        dt=float(mtab.get("dt", 1.0)),
        sigma_tangential=float(_require(mtab, "sigma_tangential", "motion")),
        sigma_normal=float(_require(mtab, "sigma_normal", "motion")),
        sigma_turn_arcmin=float(_require(mtab, "sigma_turn_arcmin", "motion")),
        p_survival=float(mtab.get("p_survival", 0.99)))

    utab = _require(doc, "undiscovered", "scenario")
    lam0 = float(_require(utab, "initial_lambda", "undiscovered"))
    initial_lambda = np.where(grid.roi_mask, lam0, 0.0)
    birth = np.where(grid.roi_mask, float(utab.get("birth_per_cell", 0.0)), 0.0)
    undiscovered = UndiscoveredModel(
        birth=birth,
        transition=diffusion_transition(grid,
                                        stay=float(utab.get("stay", 0.6)),
                                        neighbor=float(utab.get("neighbor", 0.1))),
        p_survival=float(utab.get("p_survival", 0.99)))

    ptab = _require(doc, "policy", "scenario")
    policy = Policy(kind=str(_require(ptab, "kind", "policy")),
                    fov_shape=tuple(int(v) for v in _require(ptab, "fov_shape",
                                                             "policy")),
                    rng_seed=int(ptab.get("rng_seed", 0)))

    ttab = doc.get("tracker", {})
    tracker = TrackerParams(
        k_best=int(ttab.get("k_best", 10)),
        gate_sigma=float(ttab.get("gate_sigma", 5.0)),
        birth_existence=float(ttab.get("birth_existence", 0.3)),
        birth_velocity_sigma=float(ttab.get("birth_velocity_sigma", 3.0)),
        birth_turn_sigma_rad=float(ttab.get("birth_turn_sigma_rad",
                                            motion.sigma_turn_rad)),
        assoc_threshold=float(ttab.get("assoc_threshold", 0.5)),
        prune_weight=float(ttab.get("prune_weight", 1e-5)),
        merge_distance=float(ttab.get("merge_distance", 0.5)),
        max_components=int(ttab.get("max_components", 50)),
        drop_existence=float(ttab.get("drop_existence", 1e-3)))

    qtab = doc.get("quadrature", {})
    quad = QuadratureSpec(
        lattice=tuple(int(v) for v in qtab.get("lattice", (32, 32))),
        r_max=int(qtab.get("r_max", 8)),
        eps_min=qtab.get("eps_min"))

    gtab2 = doc.get("gospa", {})
    gospa_params = GospaParams(cutoff=float(gtab2.get("cutoff", 20.0)),
                               order=float(gtab2.get("order", 2.0)))

    objects = []
    for idx, otab in enumerate(doc.get("objects", [])):
        turns = tuple((int(t[0]), float(t[1])) for t in otab.get("turns", []))
        objects.append(ObjectScript(
            birth=int(_require(otab, "birth", f"objects[{idx}]")),
            death=int(_require(otab, "death", f"objects[{idx}]")),
            initial_state=np.asarray(_require(otab, "state", f"objects[{idx}]"),
                                     dtype=float),
            turns=turns))

    try:
        return Scenario(
            name=str(doc.get("name", "scenario")),
            grid=grid,
            n_steps=int(_require(doc, "steps", "scenario")),
            objects=tuple(objects),
            sensor=sensor,
            motion=motion,
            undiscovered=undiscovered,
            initial_lambda=initial_lambda,
            policy=policy,
            mc_runs=int(doc.get("runs", 1)),
            master_seed=int(doc.get("seed", 0)),
            gospa_params=gospa_params,
            tracker=tracker,
            quad=quad,
            max_fov_step=(int(doc["max_fov_step"])
                          if doc.get("max_fov_step") is not None else None))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = yaml.safe_load(handle)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse scenario file {path}: {exc}") from exc
    return scenario_from_dict(doc)


def default_desk_dict(policy_kind: str = "cellmb") -> dict:
    """Desk-scale default: 8x8 grid of 20-pixel cells, 2x2-cell FoV, five
    vehicles entering over time, moderate clutter."""
    return {
        "name": "desk-default",
        "seed": 20260809,
        "runs": 20,
        "steps": 60,
        "grid": {"origin": [0, 0], "cell_size": [20, 20], "cols": 8, "rows": 8},
        "sensor": {"sigma_z": 2.0, "p_d": 0.9, "clutter_per_frame": 5.0},
        "motion": {"dt": 1.0, "sigma_tangential": 0.35, "sigma_normal": 0.35,
                   "sigma_turn_arcmin": 60.0, "p_survival": 0.99},
        "undiscovered": {"initial_lambda": 0.137, "birth_per_cell": 0.002,
                         "stay": 0.6, "neighbor": 0.1, "p_survival": 0.99},
        "policy": {"kind": policy_kind, "fov_shape": [2, 2]},
        "quadrature": {"lattice": [16, 16], "r_max": 8},
        "objects": [
            {"birth": 1, "death": 61, "state": [12.0, 22.0, 2.2, 0.6, 0.0]},
            {"birth": 1, "death": 61, "state": [148.0, 131.0, -2.0, 0.3, 0.0]},
            {"birth": 10, "death": 61, "state": [18.0, 122.0, 2.1, -0.8, 0.0],
             "turns": [[30, 0.05]]},
            {"birth": 20, "death": 61, "state": [138.0, 18.0, -1.6, 1.5, 0.0]},
            {"birth": 30, "death": 61, "state": [75.0, 148.0, 1.2, -2.0, 0.0],
             "turns": [[45, -0.06]]},
        ],
    }


def default_desk_scenario(policy_kind: str = "cellmb") -> Scenario:
    return scenario_from_dict(default_desk_dict(policy_kind))
