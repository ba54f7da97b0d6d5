"""Recursive estimation: labeled-Bernoulli tracks for discovered objects and
a discretized intensity filter for the undiscovered population.

Each track carries a unique label, an existence probability, and a unit-mass
Gaussian-mixture state density. The update performs ranked assignment over
tracks and measurements, marginalizes the best hypotheses per track, and
spawns new tracks from measurements that no existing track claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assignment import kbest_assignments
from .gaussians import (kalman_update, mvn_pdf, rect_mass, rect_masses_any,
                        split_gaussian)
from .grid import CellGrid, Fov
from .motion import MotionModel, ut_predict_batch
from .rfs import GaussianMixturePhd
from .sensor import SensorModel

_KAPPA_FLOOR = 1e-300


@dataclass(frozen=True)
class Track:
    label: tuple[int, int]
    existence: float
    density: GaussianMixturePhd

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError("track existence must lie in [0, 1]")

    def mode(self) -> np.ndarray:
        """Mean of the highest-weight mixture component."""
        idx = int(np.argmax(self.density.weights))
        return self.density.means[idx]


@dataclass(frozen=True)
class TrackSet:
    tracks: tuple[Track, ...] = ()

    def __post_init__(self):
        labels = [t.label for t in self.tracks]
        if len(set(labels)) != len(labels):
            raise ValueError("track labels must be unique")

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)


@dataclass(frozen=True)
class UndiscoveredModel:
    """Birth, survival and cell-to-cell motion of the undiscovered population."""

    birth: np.ndarray
    transition: np.ndarray
    p_survival: float | np.ndarray = 1.0

    def __post_init__(self):
        birth = np.asarray(self.birth, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        if np.any(birth < 0):
            raise ValueError("birth intensities must be non-negative")
        if np.any(trans < 0):
            raise ValueError("transition probabilities must be non-negative")
        rows = trans.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to one")
        object.__setattr__(self, "birth", birth)
        object.__setattr__(self, "transition", trans)


@dataclass(frozen=True)
class TrackerParams:
    """Knobs of the discovered-object tracker."""

    k_best: int = 10
    gate_sigma: float = 5.0
    birth_existence: float = 0.3
    birth_velocity_sigma: float = 3.0
    birth_turn_sigma_rad: float = 0.05
    assoc_threshold: float = 0.5
    prune_weight: float = 1e-5
    merge_distance: float = 0.5
    max_components: int = 50
    drop_existence: float = 1e-3


def diffusion_transition(grid: CellGrid, stay: float = 0.6,
                         neighbor: float = 0.1) -> np.ndarray:
    """Nearest-neighbor diffusion over ROI cells, renormalized where the
    4-neighborhood is clipped by the ROI edge. Non-ROI cells self-loop."""
    p = grid.n_cells
    trans = np.zeros((p, p))
    for j in range(p):
        if not grid.roi_mask[j]:
            trans[j, j] = 1.0
            continue
        row, col = divmod(j, grid.n_cols)
        weights = {j: stay}
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = row + dr, col + dc
            if 0 <= rr < grid.n_rows and 0 <= cc < grid.n_cols:
                i = rr * grid.n_cols + cc
                if grid.roi_mask[i]:
                    weights[i] = neighbor
        total = sum(weights.values())
        for i, w in weights.items():
            trans[j, i] = w / total
    return trans


def predict_undiscovered(lambdas: np.ndarray, model: UndiscoveredModel) -> np.ndarray:
    """One prediction step of the per-cell expected counts: birth plus
    survival-weighted diffusion."""
    lam = np.asarray(lambdas, dtype=float)
    survive = np.asarray(model.p_survival) * lam
    return model.birth + model.transition.T @ survive


def update_undiscovered(lambdas: np.ndarray, fov: Fov | None, sensor: SensorModel,
                        grid: CellGrid) -> np.ndarray:
    """Scale covered cells by their miss probability; leave the rest alone."""
    lam = np.asarray(lambdas, dtype=float).copy()
    if fov is None:
        return lam
    cells = fov.cells(grid)
    pd = sensor.p_d_cells(grid)
    lam[cells] *= 1.0 - pd[cells]
    return lam


def predict_tracks(tracks: TrackSet, motion: MotionModel) -> TrackSet:
    """Survival-discounted existence and unscented propagation of every
    mixture component through the turn model."""
    out = []
    for track in tracks:
        means, covs = ut_predict_batch(track.density.means, track.density.covs,
                                       motion)
        density = GaussianMixturePhd(track.density.weights, means, covs)
        out.append(Track(track.label, track.existence * motion.p_survival, density))
    return TrackSet(tuple(out))


def _position_fraction_inside(mean, cov, lo, hi) -> float:
    # batched path: weakly correlated covariances take the fast expansion
    return float(rect_masses_any(mean[None, :2], cov[None, :2, :2], lo, hi)[0])


def _split_axis(mean, cov, lo, hi) -> int:
    """Axis whose FoV edge cuts deepest into the component's 3-sigma box."""
    best_axis, best_score = 0, -math.inf
    for axis in range(2):
        sd = math.sqrt(cov[axis, axis])
        for edge in (lo[axis], hi[axis]):
            if abs(edge - mean[axis]) < 3.0 * sd:
                score = 3.0 * sd - abs(edge - mean[axis])
                if score > best_score:
                    best_score = score
                    best_axis = axis
    if best_score == -math.inf:
        # no edge inside the box; fall back to the wider axis
        best_axis = 0 if cov[0, 0] >= cov[1, 1] else 1
    return best_axis


def split_for_fov(tracks: TrackSet, fov: Fov, grid: CellGrid,
                  inside_threshold: float = 0.99, max_depth: int = 4,
                  min_sigma: float = 1.0) -> TrackSet:
    """Refine mixture components that straddle the FoV boundary.

    Components are recursively replaced by moment-matched two-component
    splits along the axis the boundary cuts deepest, until nearly all of a
    component's mass is on one side, the component is already narrower than
    min_sigma along the split axis, or the depth cap is reached.
    """
    lo, hi = fov.bounds(grid)
    out = []
    for track in tracks:
        queue = [(0, w, m, c) for w, m, c in zip(track.density.weights,
                                                 track.density.means,
                                                 track.density.covs)]
        weights, means, covs = [], [], []
        while queue:
            depth, w, m, c = queue.pop()
            # a 3-sigma box wholly on one side settles the decision cheaply
            s3 = 3.0 * np.sqrt(np.array([c[0, 0], c[1, 1]]))
            box_lo = m[:2] - s3
            box_hi = m[:2] + s3
            if np.all(box_lo >= lo) and np.all(box_hi <= hi):
                frac = 1.0
            elif np.any(box_hi < lo) or np.any(box_lo > hi):
                frac = 0.0
            else:
                frac = _position_fraction_inside(m, c, lo, hi)
            if (frac >= inside_threshold or frac <= 1.0 - inside_threshold
                    or depth >= max_depth):
                weights.append(w)
                means.append(m)
                covs.append(c)
                continue
            axis = _split_axis(m, c, lo, hi)
            if math.sqrt(c[axis, axis]) <= min_sigma:
                weights.append(w)
                means.append(m)
                covs.append(c)
                continue
            for piece in split_gaussian(w, m, c, axis):
                queue.append((depth + 1,) + piece)
        density = GaussianMixturePhd(np.array(weights), np.array(means),
                                     np.array(covs))
        out.append(replace(track, density=density))
    return TrackSet(tuple(out))


def _detection_probabilities(track: Track, fov: Fov | None, sensor: SensorModel,
                             grid: CellGrid) -> np.ndarray:
    pd = np.zeros(track.density.n_components)
    if fov is None:
        return pd
    for i, m in enumerate(track.density.means):
        pos = m[:2]
        if fov.contains_point(grid, pos) and grid.contains(pos):
            pd[i] = sensor.p_d_cell(grid.cell_of(pos))
    return pd


def update_tracks(tracks: TrackSet, z_points, fov: Fov, sensor: SensorModel,
                  grid: CellGrid, params: TrackerParams, step: int = 0) -> TrackSet:
    """Ranked-assignment measurement update with measurement-driven birth.

    Hypotheses pair each track with one measurement or a miss; their weights
    come from the k best assignments. Per-track posteriors marginalize over
    hypotheses. Measurements whose total association probability stays below
    the threshold spawn new tracks.
    """
    z = np.atleast_2d(np.asarray(z_points, dtype=float)) if len(z_points) else \
        np.zeros((0, 2))
    n = len(tracks)
    m = z.shape[0]
    kappa = max(sensor.clutter_density, _KAPPA_FLOOR)

    # per-track detection pieces
    pd_comp = [_detection_probabilities(t, fov, sensor, grid) for t in tracks]
    miss_eta = np.array([float(np.sum(t.density.weights * (1.0 - pd)))
                         for t, pd in zip(tracks, pd_comp)])
    det_lik = np.zeros((n, m))
    det_parts = [[None] * m for _ in range(n)]
    for i, (track, pd) in enumerate(zip(tracks, pd_comp)):
        for c, (w, mean, cov) in enumerate(zip(track.density.weights,
                                               track.density.means,
                                               track.density.covs)):
            if pd[c] <= 0.0 or w <= 0.0:
                continue
            innov_cov = sensor.H @ cov @ sensor.H.T + sensor.R
            pred_z = sensor.H @ mean
            inv = np.linalg.inv(innov_cov)
            for j in range(m):
                diff = z[j] - pred_z
                maha = float(diff @ inv @ diff)
                if maha > params.gate_sigma ** 2:
                    continue
                q, mean_post, cov_post = kalman_update(mean, cov, z[j],
                                                       sensor.H, sensor.R)
                weight = w * pd[c] * q
                det_lik[i, j] += weight
                if det_parts[i][j] is None:
                    det_parts[i][j] = []
                det_parts[i][j].append((weight, mean_post, cov_post))

    hypotheses = _rank_hypotheses(tracks, det_lik, miss_eta, kappa, params.k_best)

    assoc_prob = np.zeros(m)
    out = []
    for i, track in enumerate(tracks):
        beta_miss = 0.0
        beta_det = np.zeros(m)
        for weight, assignment in hypotheses:
            j = assignment[i] if i < len(assignment) else -1
            if 0 <= j < m:
                beta_det[j] += weight
            else:
                beta_miss += weight
        assoc_prob += beta_det
        r_prior = track.existence
        miss_post_r = (r_prior * miss_eta[i]
                       / (1.0 - r_prior + r_prior * miss_eta[i]))
        r_post = float(beta_det.sum() + beta_miss * miss_post_r)

        weights, means, covs = [], [], []
        if beta_miss > 0.0 and miss_eta[i] > 0.0:
            share = beta_miss * miss_post_r / miss_eta[i]
            for c, (w, mean, cov) in enumerate(zip(track.density.weights,
                                                   track.density.means,
                                                   track.density.covs)):
                wv = share * w * (1.0 - pd_comp[i][c])
                if wv > 0.0:
                    weights.append(wv)
                    means.append(mean)
                    covs.append(cov)
        for j in range(m):
            if beta_det[j] <= 0.0 or det_parts[i][j] is None:
                continue
            share = beta_det[j] / det_lik[i, j]
            for wv, mean_post, cov_post in det_parts[i][j]:
                weights.append(share * wv)
                means.append(mean_post)
                covs.append(cov_post)
        if not weights or r_post <= 0.0:
            continue
        weights = np.array(weights)
        density = GaussianMixturePhd(weights / weights.sum(),
                                     np.array(means), np.array(covs))
        density = _mixture_hygiene(density, params)
        out.append(Track(track.label, min(r_post, 1.0), density))

    out = [t for t in out if t.existence >= params.drop_existence]
    next_index = _next_birth_index(tracks, step)
    for j in range(m):
        if assoc_prob[j] >= params.assoc_threshold:
            continue
        if not (grid.contains(z[j]) and fov.contains_point(grid, z[j])):
            continue
        out.append(_birth_track(z[j], step, next_index, sensor, params))
        next_index += 1
    return TrackSet(tuple(out))


def _rank_hypotheses(tracks, det_lik, miss_eta, kappa, k_best):
    n = len(tracks)
    m = det_lik.shape[1]
    if n == 0:
        return [(1.0, np.zeros(0, dtype=int))]
    cost = np.full((n, m + n), np.inf)
    for i, track in enumerate(tracks):
        r = track.existence
        for j in range(m):
            ratio = r * det_lik[i, j] / kappa
            if ratio > 0.0:
                cost[i, j] = -math.log(ratio)
        miss_score = 1.0 - r + r * miss_eta[i]
        cost[i, m + i] = -math.log(max(miss_score, _KAPPA_FLOOR))
    ranked = kbest_assignments(cost, k_best)
    if not ranked:
        raise RuntimeError("assignment produced no hypothesis; "
                           "miss options should make this unreachable")
    min_cost = min(c for c, _ in ranked)
    weights = np.array([math.exp(min_cost - c) for c, _ in ranked])
    weights /= weights.sum()
    return [(float(w), assignment) for w, (_, assignment) in zip(weights, ranked)]


def _birth_track(z: np.ndarray, step: int, index: int, sensor: SensorModel,
                 params: TrackerParams) -> Track:
    mean = np.array([z[0], z[1], 0.0, 0.0, 0.0])
    cov = np.zeros((5, 5))
    cov[:2, :2] = sensor.R
    cov[2, 2] = cov[3, 3] = params.birth_velocity_sigma ** 2
    cov[4, 4] = params.birth_turn_sigma_rad ** 2
    density = GaussianMixturePhd(np.ones(1), mean[None, :], cov[None, :, :])
    return Track((step, index), params.birth_existence, density)


def _next_birth_index(tracks: TrackSet, step: int) -> int:
    used = [t.label[1] for t in tracks if t.label[0] == step]
    return max(used) + 1 if used else 0


def _mixture_hygiene(density: GaussianMixturePhd,
                     params: TrackerParams) -> GaussianMixturePhd:
    """Prune, merge, cap and renormalize a unit-mass mixture."""
    keep = density.weights > params.prune_weight
    if not keep.any():
        keep = density.weights == density.weights.max()
    weights = density.weights[keep]
    means = density.means[keep]
    covs = density.covs[keep]

    merged_w, merged_m, merged_c = _greedy_merge(weights, means, covs,
                                                 params.merge_distance)
    order = np.argsort(merged_w)[::-1][:params.max_components]
    weights = merged_w[order]
    return GaussianMixturePhd(weights / weights.sum(), merged_m[order],
                              merged_c[order])


def _greedy_merge(weights, means, covs, merge_distance):
    """Moment-matched merge led by the heaviest remaining component."""
    merged_w, merged_m, merged_c = [], [], []
    remaining = np.arange(len(weights))
    threshold = merge_distance ** 2
    while remaining.size:
        lead = remaining[np.argmax(weights[remaining])]
        inv = np.linalg.inv(covs[lead])
        diffs = means[remaining] - means[lead]
        maha = np.einsum("ni,ij,nj->n", diffs, inv, diffs)
        group = remaining[maha < threshold]
        w_group = weights[group]
        w_sum = float(w_group.sum())
        mean = w_group @ means[group] / w_sum
        diffs = means[group] - mean
        cov = (np.einsum("n,nij->ij", w_group, covs[group])
               + np.einsum("n,ni,nj->ij", w_group, diffs, diffs)) / w_sum
        merged_w.append(w_sum)
        merged_m.append(mean)
        merged_c.append(0.5 * (cov + cov.T))
        remaining = remaining[maha >= threshold]
    return np.array(merged_w), np.array(merged_m), np.array(merged_c)


def condense_mixture(phd: GaussianMixturePhd,
                     merge_distance: float = 1.5) -> GaussianMixturePhd:
    """Moment-matched merge of nearby components; total mass is preserved.

    Intended for planning-side copies of an intensity, where the exact
    mixture refinement carries no extra information at cell scale.
    """
    if phd.n_components <= 1:
        return phd
    weights = phd.weights
    means = phd.means
    covs = phd.covs
    merged_w, merged_m, merged_c = [], [], []
    remaining = np.arange(len(weights))
    threshold = merge_distance ** 2
    while remaining.size:
        lead = remaining[np.argmax(weights[remaining])]
        inv = np.linalg.inv(covs[lead][:2, :2])
        diffs = means[remaining][:, :2] - means[lead][:2]
        maha = np.einsum("ni,ij,nj->n", diffs, inv, diffs)
        group = remaining[maha < threshold]
        w_group = weights[group]
        w_sum = float(w_group.sum())
        mean = w_group @ means[group] / w_sum
        diffs = means[group] - mean
        cov = (np.einsum("n,nij->ij", w_group, covs[group])
               + np.einsum("n,ni,nj->ij", w_group, diffs, diffs)) / w_sum
        merged_w.append(w_sum)
        merged_m.append(mean)
        merged_c.append(0.5 * (cov + cov.T))
        remaining = remaining[maha >= threshold]
    return GaussianMixturePhd(np.array(merged_w), np.array(merged_m),
                              np.array(merged_c))


def discovered_phd(tracks: TrackSet) -> GaussianMixturePhd:
    """Existence-weighted union of the track densities."""
    weights, means, covs = [], [], []
    for track in tracks:
        for w, m, c in zip(track.density.weights, track.density.means,
                           track.density.covs):
            weights.append(track.existence * w)
            means.append(m)
            covs.append(c)
    if not weights:
        return GaussianMixturePhd.empty(5)
    return GaussianMixturePhd(np.array(weights), np.array(means), np.array(covs))


def extract_estimates(tracks: TrackSet, threshold: float = 0.5):
    """Tracks confident enough to report, each at its dominant component mean."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("extraction threshold must lie in (0, 1)")
    return [(t.label, t.mode()) for t in tracks if t.existence > threshold]
