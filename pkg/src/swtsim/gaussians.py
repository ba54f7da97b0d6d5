"""Low-level Gaussian primitives: pdf evaluation, rectangle masses, splits."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

# Correlation below this is treated as axis-aligned (exact CDF product path).
_DIAG_TOL = 1e-12

# Batched rectangle masses switch from the corrected CDF product to full
# quadrature above this correlation.
_NEAR_DIAG_RHO = 0.08

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def mvn_pdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Density of N(mean, cov) at an (n, d) array of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    chol = np.linalg.cholesky(cov)
    diff = points - np.asarray(mean, dtype=float)[None, :]
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    log_norm = -0.5 * (d * math.log(2.0 * math.pi) + log_det)
    return np.exp(log_norm - 0.5 * maha)


def gm_pdf_2d(points: np.ndarray, weights: np.ndarray, means: np.ndarray,
              covs: np.ndarray) -> np.ndarray:
    """Vectorized 2-D Gaussian-mixture density at an (n, 2) array of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(weights) == 0:
        return np.zeros(points.shape[0])
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    d = covs[:, 1, 1]
    det = a * d - b * b
    dx = points[None, :, 0] - means[:, 0, None]
    dy = points[None, :, 1] - means[:, 1, None]
    maha = ((d / det)[:, None] * dx * dx
            - 2.0 * (b / det)[:, None] * dx * dy
            + (a / det)[:, None] * dy * dy)
    norms = np.asarray(weights) / (2.0 * math.pi * np.sqrt(det))
    return norms @ np.exp(-0.5 * maha)


def rect_masses_diag(mean: np.ndarray, cov: np.ndarray, los: np.ndarray,
                     his: np.ndarray) -> np.ndarray:
    """Axis-aligned Gaussian rectangle masses for a batch of rectangles."""
    sx = math.sqrt(cov[0, 0])
    sy = math.sqrt(cov[1, 1])
    px = ndtr((his[:, 0] - mean[0]) / sx) - ndtr((los[:, 0] - mean[0]) / sx)
    py = ndtr((his[:, 1] - mean[1]) / sy) - ndtr((los[:, 1] - mean[1]) / sy)
    return px * py


def rect_masses_any(means: np.ndarray, covs: np.ndarray, lo: np.ndarray,
                    hi: np.ndarray) -> np.ndarray:
    """Rectangle masses for a batch of 2-D Gaussians over one rectangle.

    Axis-aligned components use exact CDF products; correlated ones share a
    vectorized Gauss-Legendre lattice sized for the narrowest of them.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    n = means.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    sx = np.sqrt(covs[:, 0, 0])
    sy = np.sqrt(covs[:, 1, 1])
    rho = covs[:, 0, 1] / (sx * sy)
    # weak correlation: CDF product plus a second-order expansion in rho
    # (error is O(rho^3), below 2e-5 at the threshold)
    weak = np.abs(rho) <= _NEAR_DIAG_RHO
    if weak.any():
        ul = (lo[0] - means[weak, 0]) / sx[weak]
        uh = (hi[0] - means[weak, 0]) / sx[weak]
        vl = (lo[1] - means[weak, 1]) / sy[weak]
        vh = (hi[1] - means[weak, 1]) / sy[weak]
        base = (ndtr(uh) - ndtr(ul)) * (ndtr(vh) - ndtr(vl))
        norm = 1.0 / math.sqrt(2.0 * math.pi)
        phi_ul = norm * np.exp(-0.5 * ul * ul)
        phi_uh = norm * np.exp(-0.5 * uh * uh)
        phi_vl = norm * np.exp(-0.5 * vl * vl)
        phi_vh = norm * np.exp(-0.5 * vh * vh)
        first = (phi_uh - phi_ul) * (phi_vh - phi_vl)
        second = (uh * phi_uh - ul * phi_ul) * (vh * phi_vh - vl * phi_vl)
        r = rho[weak]
        out[weak] = base + r * first + 0.5 * r * r * second
    rest = np.flatnonzero(~weak)
    if rest.size:
        out[rest] = _rect_masses_conditional(
            means[rest], sx[rest], sy[rest], rho[rest], lo, hi)
    return out


def _rect_masses_conditional(means, sx, sy, rho, lo, hi) -> np.ndarray:
    """Exact rectangle masses for correlated Gaussians via quadrature of
    the conditional CDF along the first axis. Vectorized over components."""
    ul = np.clip((lo[0] - means[:, 0]) / sx, -9.0, 9.0)
    uh = np.clip((hi[0] - means[:, 0]) / sx, -9.0, 9.0)
    vl = (lo[1] - means[:, 1]) / sy
    vh = (hi[1] - means[:, 1]) / sy
    span = uh - ul
    u = ul[:, None] + span[:, None] * _COND_NODES[None, :]
    s = np.sqrt(1.0 - rho * rho)
    inner = (ndtr((vh[:, None] - rho[:, None] * u) / s[:, None])
             - ndtr((vl[:, None] - rho[:, None] * u) / s[:, None]))
    dens = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return np.maximum(span, 0.0) * ((dens * inner) @ _COND_WEIGHTS)


def _gl_panel_nodes(lo: float, hi: float, panels: int):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _gl_panel_nodes_unit(panels: int):
    return _gl_panel_nodes(0.0, 1.0, panels)


_COND_NODES, _COND_WEIGHTS = _gl_panel_nodes_unit(6)


_GL_LATTICES: dict = {}


def _gl_rect_lattice(width: float, height: float, panels_x: int, panels_y: int):
    """Cached tensor Gauss-Legendre lattice for a rectangle anchored at zero."""
    key = (round(width, 9), round(height, 9), panels_x, panels_y)
    cached = _GL_LATTICES.get(key)
    if cached is not None:
        return cached
    xs, wx = _gl_panel_nodes(0.0, width, panels_x)
    ys, wy = _gl_panel_nodes(0.0, height, panels_y)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    offsets = np.column_stack([gx.ravel(), gy.ravel()])
    weights = np.outer(wx, wy).ravel()
    _GL_LATTICES[key] = (offsets, weights)
    return offsets, weights


def conditional_batch(means: np.ndarray, covs: np.ndarray, z: np.ndarray,
                      noise_cov: np.ndarray):
    """Vectorized factorization N(z; s, R) N(s; m_i, C_i) = q_i N(s; mc_i, Pc_i)
    for a batch of 2-D components against one measurement."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    z = np.asarray(z, dtype=float)
    s_cov = covs + noise_cov[None, :, :]
    a = s_cov[:, 0, 0]
    b = s_cov[:, 0, 1]
    d = s_cov[:, 1, 1]
    det = a * d - b * b
    dx = z[0] - means[:, 0]
    dy = z[1] - means[:, 1]
    maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    q = np.exp(-0.5 * maha) / (2.0 * math.pi * np.sqrt(det))
    # gain G = C S^{-1}, conditional mean m + G (z - m), cov C - G C
    inv = np.empty_like(s_cov)
    inv[:, 0, 0] = d / det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / det
    inv[:, 1, 1] = a / det
    gain = np.einsum("nij,njk->nik", covs, inv)
    delta = np.stack([dx, dy], axis=1)
    m_c = means + np.einsum("nij,nj->ni", gain, delta)
    p_c = covs - np.einsum("nij,njk->nik", gain, covs)
    p_c = 0.5 * (p_c + np.transpose(p_c, (0, 2, 1)))
    return q, m_c, p_c


def rect_mass(mean: np.ndarray, cov: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Probability that a 2-D Gaussian falls inside the axis-aligned rectangle [lo, hi].

    Axis-aligned covariances use the exact CDF product; correlated ones fall
    back to order-16 Gauss-Legendre tensor quadrature over the rectangle.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    sx = math.sqrt(cov[0, 0])
    sy = math.sqrt(cov[1, 1])
    if abs(cov[0, 1]) <= _DIAG_TOL * sx * sy:
        px = ndtr((hi[0] - mean[0]) / sx) - ndtr((lo[0] - mean[0]) / sx)
        py = ndtr((hi[1] - mean[1]) / sy) - ndtr((lo[1] - mean[1]) / sy)
        return float(px * py)
    return _rect_mass_quadrature(mean, cov, lo, hi)


def _gl_points_1d(lo: float, hi: float, mean: float, sigma: float):
    # clip to the Gaussian's effective support, then one Gauss-Legendre panel
    # per ~4 sigma so order 16 resolves the integrand
    lo = max(lo, mean - 9.0 * sigma)
    hi = min(hi, mean + 9.0 * sigma)
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    panels = max(1, int(math.ceil((hi - lo) / (4.0 * sigma))))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _rect_mass_quadrature(mean, cov, lo, hi) -> float:
    xs, wx = _gl_points_1d(lo[0], hi[0], mean[0], math.sqrt(cov[0, 0]))
    ys, wy = _gl_points_1d(lo[1], hi[1], mean[1], math.sqrt(cov[1, 1]))
    if xs.size == 0 or ys.size == 0:
        return 0.0
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    vals = mvn_pdf(pts, mean, cov).reshape(xs.size, ys.size)
    return float(wx @ vals @ wy)


def _phi_antiderivative(t: np.ndarray) -> np.ndarray:
    # G(t) = integral of the standard normal CDF: t*Phi(t) + phi(t)
    t = np.asarray(t, dtype=float)
    return t * ndtr(t) + np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def uniform_to_rect_transfer_1d(src_lo: float, src_hi: float, dst_lo: float,
                                dst_hi: float, sigma: float) -> float:
    """Mass reaching [dst_lo, dst_hi] from a uniform source on [src_lo, src_hi]
    blurred by centered Gaussian noise with the given sigma. Closed form."""
    s = sigma
    width = src_hi - src_lo
    g = _phi_antiderivative
    val = (g((dst_hi - src_lo) / s) - g((dst_lo - src_lo) / s)
           - g((dst_hi - src_hi) / s) + g((dst_lo - src_hi) / s))
    return float(s * val / width)


def uniform_to_rect_transfer(src_lo, src_hi, dst_lo, dst_hi, cov) -> float:
    """2-D version of the uniform-to-rectangle transfer for diagonal noise."""
    cov = np.asarray(cov, dtype=float)
    if abs(cov[0, 1]) > _DIAG_TOL * math.sqrt(cov[0, 0] * cov[1, 1]):
        raise ValueError("uniform_to_rect_transfer requires diagonal noise covariance")
    tx = uniform_to_rect_transfer_1d(src_lo[0], src_hi[0], dst_lo[0], dst_hi[0],
                                     math.sqrt(cov[0, 0]))
    ty = uniform_to_rect_transfer_1d(src_lo[1], src_hi[1], dst_lo[1], dst_hi[1],
                                     math.sqrt(cov[1, 1]))
    return tx * ty


def conditional_on_measurement(mean, cov, z, noise_cov):
    """Factor N(z; s, R) N(s; m, P) = q * N(s; m_c, P_c).

    Returns (q, m_c, P_c) where q = N(z; m, P + R).
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    z = np.asarray(z, dtype=float)
    noise_cov = np.asarray(noise_cov, dtype=float)
    s_cov = cov + noise_cov
    q = float(mvn_pdf(z[None, :], mean, s_cov)[0])
    gain = np.linalg.solve(s_cov.T, cov.T).T
    m_c = mean + gain @ (z - mean)
    p_c = cov - gain @ cov
    p_c = 0.5 * (p_c + p_c.T)
    return q, m_c, p_c


def split_gaussian(weight: float, mean: np.ndarray, cov: np.ndarray, axis: int,
                   sigma_ratio: float = 0.5):
    """Split one Gaussian into a two-component mixture along a state axis.

    The split preserves the mixture mean and covariance exactly:
    with sigma_ratio b, the component means are displaced by
    a = sqrt(1 - b^2) standard deviations along the regression direction.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    var = cov[axis, axis]
    sd = math.sqrt(var)
    displacement = math.sqrt(1.0 - sigma_ratio ** 2)
    direction = cov[:, axis] / var
    shift = displacement * sd * direction
    new_cov = cov - (1.0 - sigma_ratio ** 2) * np.outer(cov[:, axis], cov[axis, :]) / var
    new_cov = 0.5 * (new_cov + new_cov.T)
    half = 0.5 * weight
    return [(half, mean - shift, new_cov), (half, mean + shift, new_cov)]


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix."""
    vals, vecs = np.linalg.eigh(np.asarray(matrix, dtype=float))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def kalman_update(mean, cov, z, h_matrix, noise_cov):
    """Standard Kalman measurement update; returns (likelihood, mean', cov')."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    z = np.asarray(z, dtype=float)
    h = np.asarray(h_matrix, dtype=float)
    innov_cov = h @ cov @ h.T + noise_cov
    innov_cov = 0.5 * (innov_cov + innov_cov.T)
    q = float(mvn_pdf(z[None, :], h @ mean, innov_cov)[0])
    gain = np.linalg.solve(innov_cov.T, (cov @ h.T).T).T
    mean_post = mean + gain @ (z - h @ mean)
    cov_post = cov - gain @ innov_cov @ gain.T
    cov_post = 0.5 * (cov_post + cov_post.T)
    return q, mean_post, cov_post
