"""Per-volume plane candidate generation.

Two interchangeable strategies: 3-point RANSAC on the volume's mesh vertices,
and robust iteratively-reweighted least squares fitted directly to the SDF
values of the voxel block (no intermediate mesh needed).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, Plane
from .grid import Coord, Volume, VolumeGrid, VoxelGridConfig
from .meshing import VolumeMesh, average_face_normal, extract_mesh

METHOD_RANSAC_MESH = "ransac_mesh"
METHOD_SDF_IRLS = "sdf_irls"


@dataclass(frozen=True)
class FitConfig:
    ransac_max_iters: int = 100
    ransac_inlier_dist: float = 0.02
    ransac_inlier_ratio: float = 0.8
    irls_max_iters: int = 30
    huber_delta: float = 0.05
    sdf_band_factor: float = 0.8
    accept_mean_abs_residual: float = 0.02
    min_valid_voxels: int = 32
    min_ransac_vertices: int = 12
    # Reject supports that are nearly a line (e.g. the thin observation pocket
    # along a corner edge): sqrt of the middle eigenvalue of the support
    # position covariance must reach this many meters.
    min_support_spread: float = 0.045
    huber_weight_mode: str = "irls"  # irls: min(1, delta/|r|); loss: quadratic/linear loss value

    def __post_init__(self):
        for name in (
            "ransac_max_iters",
            "ransac_inlier_dist",
            "irls_max_iters",
            "huber_delta",
            "sdf_band_factor",
            "accept_mean_abs_residual",
            "min_valid_voxels",
            "min_ransac_vertices",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.ransac_inlier_ratio <= 1:
            raise ValueError("ransac_inlier_ratio must be in (0, 1]")
        if self.huber_weight_mode not in ("irls", "loss"):
            raise ValueError(f"unknown huber_weight_mode {self.huber_weight_mode!r}")


@dataclass
class PlaneCandidate:
    plane: Plane
    volume_coord: Coord
    support: int  # voxels (IRLS) or inlier vertices (RANSAC)
    mean_abs_residual: float
    method: str
    iterations: int = 0
    fit_time_us: float = 0.0


def huber_weights(residuals: Array, delta: float, mode: str = "irls") -> Array:
    """Per-sample robust weights derived from the Huber loss.

    ``irls`` is the standard reweighting min(1, delta/|r|); ``loss`` plugs the
    loss value itself in as the weight, kept behind a switch because it
    up-weights inliers quadratically instead of down-weighting outliers.
    """
    r = np.abs(residuals)
    if not math.isfinite(delta):
        return np.ones_like(r)
    if mode == "loss":
        return np.where(r <= delta, 0.5 * r**2, delta * (r - 0.5 * delta))
    with np.errstate(divide="ignore"):
        return np.where(r <= delta, 1.0, delta / r)


def _support_spread(points: Array) -> float:
    """Sqrt of the middle eigenvalue of the position covariance: near zero for
    supports that degenerate to a line, where any pencil of planes fits."""
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / len(points)
    eig = np.linalg.eigvalsh(cov)
    return float(np.sqrt(max(eig[1], 0.0)))


def _solve_weighted_plane(points: Array, values: Array, weights: Array):
    """Weighted affine regression values ~ n.x + d, solved on centered
    coordinates for conditioning.  Returns raw (n, d) before normalization,
    or None when the normal equations are singular."""
    center = points.mean(axis=0)
    a = np.empty((len(points), 4))
    a[:, :3] = points - center
    a[:, 3] = 1.0
    aw = a * weights[:, None]
    lhs = a.T @ aw
    rhs = aw.T @ values
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return None
    n_raw = sol[:3]
    d_raw = sol[3] - float(n_raw @ center)
    return n_raw, d_raw


def fit_sdf_irls(
    volume: Volume,
    cfg: FitConfig,
    grid_cfg: VoxelGridConfig,
) -> PlaneCandidate | None:
    """Robust plane fit to the SDF values of one voxel block.

    Uses voxels with weight > 0 and |sdf| inside the fitting band.  Each
    round solves the weighted least squares for (n, d), renormalizes to unit
    normal, then recomputes Huber weights from the residuals
    r_k = n.x_k + d - sdf_k.  Stops when the weights stop changing or the
    normalized coefficients move less than 1e-6.  The candidate is accepted
    when the unweighted mean |r| over all selected voxels is below the
    acceptance threshold.
    """
    band = cfg.sdf_band_factor * grid_cfg.truncation
    mask = (volume.weight > 0) & (np.abs(volume.sdf) < band)
    if int(mask.sum()) < cfg.min_valid_voxels:
        return None
    points = grid_cfg.voxel_centers(volume.coord)[mask]
    values = volume.sdf[mask]
    if _support_spread(points) < cfg.min_support_spread:
        return None

    weights = np.ones(len(values))
    coeffs_prev: Array | None = None
    plane: Plane | None = None
    iterations = 0
    for iterations in range(1, cfg.irls_max_iters + 1):
        solution = _solve_weighted_plane(points, values, weights)
        if solution is None:
            return None
        n_raw, d_raw = solution
        norm = float(np.linalg.norm(n_raw))
        # A plane-like SDF has unit gradient; far-from-affine fields do not.
        if norm < 0.5:
            return None
        plane = Plane(n_raw / norm, d_raw / norm, normalize=False)
        coeffs = plane.coefficients()
        residuals = plane.signed_distances(points) - values
        new_weights = huber_weights(residuals, cfg.huber_delta, cfg.huber_weight_mode)
        if coeffs_prev is not None and np.max(np.abs(coeffs - coeffs_prev)) < 1e-6:
            break
        if np.array_equal(new_weights, weights):
            break
        coeffs_prev = coeffs
        weights = new_weights

    assert plane is not None
    mean_abs = float(np.mean(np.abs(plane.signed_distances(points) - values)))
    if mean_abs >= cfg.accept_mean_abs_residual:
        return None
    return PlaneCandidate(
        plane=plane,
        volume_coord=volume.coord,
        support=int(mask.sum()),
        mean_abs_residual=mean_abs,
        method=METHOD_SDF_IRLS,
        iterations=iterations,
    )


def _plane_from_triplet(p0: Array, p1: Array, p2: Array) -> Plane | None:
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal)
    if norm < 1e-12:
        return None
    normal = normal / norm
    return Plane(normal, -float(normal @ p0), normalize=False)


def fit_ransac_mesh(mesh: VolumeMesh, cfg: FitConfig, rng_seed: int) -> PlaneCandidate | None:
    """3-point RANSAC over mesh vertices, refined by the covariance of the
    inlier set and oriented along the mean face normal.

    The best model maximizes the inlier count; ties prefer the smaller RMS
    inlier residual, then the earlier iteration, so results are a pure
    function of (mesh, config, seed).
    """
    vertices = mesh.positions
    n_vertices = len(vertices)
    if n_vertices < cfg.min_ransac_vertices:
        return None
    rng = np.random.default_rng(rng_seed)

    best_count = 0
    best_rms = np.inf
    best_inliers: Array | None = None
    for _ in range(cfg.ransac_max_iters):
        idx = rng.choice(n_vertices, size=3, replace=False)
        model = _plane_from_triplet(vertices[idx[0]], vertices[idx[1]], vertices[idx[2]])
        if model is None:
            continue
        dist = np.abs(model.signed_distances(vertices))
        inliers = dist < cfg.ransac_inlier_dist
        count = int(inliers.sum())
        if count == 0:
            continue
        rms = float(np.sqrt(np.mean(dist[inliers] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count = count
            best_rms = rms
            best_inliers = inliers

    if best_inliers is None or best_count / n_vertices < cfg.ransac_inlier_ratio:
        return None

    inlier_pts = vertices[best_inliers]
    if _support_spread(inlier_pts) < cfg.min_support_spread:
        return None
    centroid = inlier_pts.mean(axis=0)
    centered = inlier_pts - centroid
    cov = centered.T @ centered
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    normal = eigenvectors[:, int(np.argmin(eigenvalues))]
    plane = Plane(normal, -float(normal @ centroid))
    if float(plane.n @ average_face_normal(mesh)) < 0:
        plane = plane.flipped()

    mean_abs = float(np.mean(np.abs(plane.signed_distances(inlier_pts))))
    if mean_abs >= cfg.accept_mean_abs_residual:
        return None
    return PlaneCandidate(
        plane=plane,
        volume_coord=mesh.coord,
        support=best_count,
        mean_abs_residual=mean_abs,
        method=METHOD_RANSAC_MESH,
        iterations=cfg.ransac_max_iters,
    )


def volume_fit_seed(base_seed: int, frame_index: int, coord: Coord) -> int:
    """Stable per-volume seed; offsets keep SeedSequence entropy non-negative."""
    offset = 1 << 20
    ss = np.random.SeedSequence(
        [base_seed, frame_index, coord[0] + offset, coord[1] + offset, coord[2] + offset]
    )
    return int(ss.generate_state(1)[0])


@dataclass
class CandidateGeneration:
    candidates: dict[Coord, PlaneCandidate] = field(default_factory=dict)
    fit_times_us: dict[Coord, float] = field(default_factory=dict)


def _fit_one(grid: VolumeGrid, coord: Coord, method: str, cfg: FitConfig, seed: int):
    start = time.perf_counter()
    if method == METHOD_SDF_IRLS:
        candidate = fit_sdf_irls(grid.require(coord), cfg, grid.config)
    elif method == METHOD_RANSAC_MESH:
        # The auxiliary mesh is part of this strategy's cost, so it is timed.
        mesh = extract_mesh(grid, coord)
        candidate = fit_ransac_mesh(mesh, cfg, seed)
    else:
        raise ValueError(f"unknown candidate method {method!r}")
    elapsed_us = (time.perf_counter() - start) * 1e6
    return candidate, elapsed_us


def generate_candidates(
    grid: VolumeGrid,
    dirty: set[Coord],
    method: str,
    cfg: FitConfig,
    base_seed: int = 0,
    frame_index: int = 0,
    threads: int = 1,
) -> CandidateGeneration:
    """Run the selected fitter on every dirty volume, replacing stored
    candidates (cleared when no plane is found).  Fitting is a pure function
    per volume, so volumes can be processed in parallel; results are merged
    in sorted order either way."""
    coords = sorted(tuple(c) for c in dirty)
    for coord in coords:
        grid.require(coord)
    result = CandidateGeneration()

    def job(coord):
        seed = volume_fit_seed(base_seed, frame_index, coord)
        return coord, _fit_one(grid, coord, method, cfg, seed)

    if threads > 1 and len(coords) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = dict(pool.map(job, coords))
        items = [(c, outcomes[c]) for c in coords]
    else:
        items = [job(coord) for coord in coords]

    for coord, (candidate, elapsed_us) in items:
        volume = grid.require(coord)
        volume.candidate = candidate
        result.fit_times_us[coord] = elapsed_us
        if candidate is not None:
            candidate.fit_time_us = elapsed_us
            result.candidates[coord] = candidate
    return result


def all_candidates(grid: VolumeGrid) -> dict[Coord, PlaneCandidate]:
    """Snapshot of every stored candidate in the map, keyed by coord."""
    out: dict[Coord, PlaneCandidate] = {}
    for coord in grid.coords():
        candidate = grid.volumes[coord].candidate
        if candidate is not None:
            out[coord] = candidate
    return out
