"""Clustering of per-volume plane candidates into globally consistent refined
planes, and propagation of refined planes back to every intersected volume."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detect import PlaneCandidate
from .geometry import Array, Plane, aabb_corners, angle_between
from .grid import Coord, VolumeGrid, VoxelGridConfig


@dataclass(frozen=True)
class MergeConfig:
    angle_eps_deg: float = 3.0
    dist_lambda: float = 0.05
    ransac_iters: int = 50
    min_support: int = 4
    propagate_dist: float = 0.10
    # Alternate reading of the distance criterion (project the hypothesis
    # volume's center onto the candidate plane instead); off by default.
    distance_alt: bool = False

    def __post_init__(self):
        if not 0 < self.angle_eps_deg < 90:
            raise ValueError("angle_eps_deg must be in (0, 90)")
        if self.dist_lambda <= 0:
            raise ValueError("dist_lambda must be positive")
        if self.min_support < 1:
            raise ValueError("min_support must be at least 1")

    @property
    def cos_eps(self) -> float:
        return float(np.cos(np.deg2rad(self.angle_eps_deg)))


@dataclass
class PlaneExtent:
    """Axis-aligned bounding rectangle of member volume footprints, expressed
    in the plane's deterministic 2-D basis."""

    u_axis: Array
    v_axis: Array
    min_u: float
    min_v: float
    max_u: float
    max_v: float

    def inflated(self, margin: float) -> "PlaneExtent":
        return PlaneExtent(
            self.u_axis,
            self.v_axis,
            self.min_u - margin,
            self.min_v - margin,
            self.max_u + margin,
            self.max_v + margin,
        )

    def contains_uv(self, u, v) -> Array:
        return (u >= self.min_u) & (u <= self.max_u) & (v >= self.min_v) & (v <= self.max_v)

    def center_point(self, plane: Plane) -> Array:
        cu = 0.5 * (self.min_u + self.max_u)
        cv = 0.5 * (self.min_v + self.max_v)
        return -plane.d * plane.n + cu * self.u_axis + cv * self.v_axis


@dataclass
class RefinedPlane:
    id: int
    plane: Plane
    support: int
    member_coords: set[Coord]
    label: str = "other"
    extent: PlaneExtent | None = None

    def anchor(self) -> Array:
        if self.extent is not None:
            return self.extent.center_point(self.plane)
        return -self.plane.d * self.plane.n


def compatible(
    hypothesis: Plane,
    candidate_plane: Plane,
    candidate_center: Array,
    cfg: MergeConfig,
    hypothesis_center: Array | None = None,
) -> bool:
    """Inlier test between a hypothesis plane and a volume's candidate.

    Normals must agree within the angular threshold, and the candidate
    volume's center projected onto the hypothesis plane must lie within the
    distance threshold of the candidate plane.  The test is one-directional.
    """
    if float(np.dot(hypothesis.n, candidate_plane.n)) <= cfg.cos_eps:
        return False
    if cfg.distance_alt:
        anchor = hypothesis_center if hypothesis_center is not None else hypothesis.project(candidate_center)
        projected = candidate_plane.project(anchor)
        return abs(hypothesis.signed_distance(projected)) < cfg.dist_lambda
    projected = hypothesis.project(candidate_center)
    return abs(candidate_plane.signed_distance(projected)) < cfg.dist_lambda


def _volume_center(coord: Coord, grid_cfg: VoxelGridConfig) -> Array:
    return grid_cfg.volume_center(coord)


def _refined_parameters(
    members: list[tuple[Coord, PlaneCandidate]], grid_cfg: VoxelGridConfig
) -> Plane:
    """Closed-form merge of member candidates: support-weighted mean normal,
    offset through the support-weighted centroid of the member volume centers
    projected onto their own candidate planes."""
    weights = np.array([float(c.support) for _, c in members])
    normals = np.array([c.plane.n for _, c in members])
    mean_normal = (normals * weights[:, None]).sum(axis=0)
    mean_normal = mean_normal / np.linalg.norm(mean_normal)
    projected = np.array(
        [c.plane.project(_volume_center(coord, grid_cfg)) for coord, c in members]
    )
    centroid = (projected * weights[:, None]).sum(axis=0) / weights.sum()
    return Plane(mean_normal, -float(mean_normal @ centroid), normalize=False)


def _plane_extent(plane: Plane, member_coords, grid_cfg: VoxelGridConfig) -> PlaneExtent:
    u_axis, v_axis = plane.basis()
    us: list[float] = []
    vs: list[float] = []
    for coord in member_coords:
        lo, hi = grid_cfg.volume_bounds(coord)
        corners = aabb_corners(lo, hi)
        us.extend(corners @ u_axis)
        vs.extend(corners @ v_axis)
    return PlaneExtent(u_axis, v_axis, min(us), min(vs), max(us), max(vs))


def _emit(
    plane_id: int,
    members: list[tuple[Coord, PlaneCandidate]],
    grid_cfg: VoxelGridConfig,
) -> RefinedPlane:
    plane = _refined_parameters(members, grid_cfg)
    coords = {coord for coord, _ in members}
    return RefinedPlane(
        id=plane_id,
        plane=plane,
        support=len(members),
        member_coords=coords,
        extent=_plane_extent(plane, coords, grid_cfg),
    )


def merge_ransac(
    candidates: dict[Coord, PlaneCandidate],
    cfg: MergeConfig,
    grid_cfg: VoxelGridConfig,
    rng_seed: int = 0,
) -> list[RefinedPlane]:
    """Consensus clustering: each round draws random candidates as hypotheses,
    keeps the one with the most compatible candidates, consumes its inliers
    into a refined plane, and repeats until nothing reaches min_support."""
    rng = np.random.default_rng(rng_seed)
    remaining = sorted(candidates.keys())
    planes: list[RefinedPlane] = []
    next_id = 0
    while remaining:
        best_inliers: list[Coord] = []
        for _ in range(cfg.ransac_iters):
            seed_coord = remaining[int(rng.integers(len(remaining)))]
            hypothesis = candidates[seed_coord].plane
            hypothesis_center = _volume_center(seed_coord, grid_cfg)
            inliers = [
                coord
                for coord in remaining
                if compatible(
                    hypothesis,
                    candidates[coord].plane,
                    _volume_center(coord, grid_cfg),
                    cfg,
                    hypothesis_center=hypothesis_center,
                )
            ]
            if len(inliers) > len(best_inliers):
                best_inliers = inliers
        if len(best_inliers) < cfg.min_support:
            break
        members = [(coord, candidates[coord]) for coord in best_inliers]
        planes.append(_emit(next_id, members, grid_cfg))
        next_id += 1
        consumed = set(best_inliers)
        remaining = [c for c in remaining if c not in consumed]
    return planes


_NEIGHBOR_STEPS = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)


def merge_region_growing(
    candidates: dict[Coord, PlaneCandidate],
    cfg: MergeConfig,
    grid_cfg: VoxelGridConfig,
) -> list[RefinedPlane]:
    """Breadth-first growth over 6-connected volume neighbors.

    Seeds are visited in ascending coordinate order so the result is
    deterministic despite the method's seed-order sensitivity.  Members are
    consumed even when a grown region misses min_support and is dropped.
    """
    unconsumed = dict(sorted(candidates.items()))
    planes: list[RefinedPlane] = []
    next_id = 0
    for seed_coord in sorted(candidates.keys()):
        if seed_coord not in unconsumed:
            continue
        members: list[tuple[Coord, PlaneCandidate]] = [(seed_coord, unconsumed.pop(seed_coord))]
        estimate = members[0][1].plane
        # Running support-weighted sums update the estimate in O(1) per member.
        weight_sum = float(members[0][1].support)
        normal_sum = members[0][1].plane.n * weight_sum
        centroid_sum = members[0][1].plane.project(_volume_center(seed_coord, grid_cfg)) * weight_sum
        queue = [seed_coord]
        while queue:
            coord = queue.pop(0)
            for step in _NEIGHBOR_STEPS:
                neighbor = (coord[0] + step[0], coord[1] + step[1], coord[2] + step[2])
                candidate = unconsumed.get(neighbor)
                if candidate is None:
                    continue
                if not compatible(
                    estimate, candidate.plane, _volume_center(neighbor, grid_cfg), cfg
                ):
                    continue
                unconsumed.pop(neighbor)
                members.append((neighbor, candidate))
                w = float(candidate.support)
                weight_sum += w
                normal_sum = normal_sum + candidate.plane.n * w
                centroid_sum = centroid_sum + candidate.plane.project(
                    _volume_center(neighbor, grid_cfg)
                ) * w
                mean_normal = normal_sum / np.linalg.norm(normal_sum)
                estimate = Plane(
                    mean_normal,
                    -float(mean_normal @ (centroid_sum / weight_sum)),
                    normalize=False,
                )
                queue.append(neighbor)
        if len(members) >= cfg.min_support:
            planes.append(_emit(next_id, members, grid_cfg))
            next_id += 1
    return planes


@dataclass
class PropagationResult:
    inserted: dict[Coord, set[int]] = field(default_factory=dict)
    volumes_by_plane: dict[int, set[Coord]] = field(default_factory=dict)

    def note(self, plane_id: int, coord: Coord, is_new: bool) -> None:
        self.volumes_by_plane.setdefault(plane_id, set()).add(coord)
        if is_new:
            self.inserted.setdefault(coord, set()).add(plane_id)


def _slab_coord_range(plane: Plane, extent: PlaneExtent, dist: float, grid_cfg: VoxelGridConfig):
    """Integer coord bounding box of the extent rectangle swept +-dist along
    the plane normal (the only region propagation can ever touch)."""
    rect = [
        extent.min_u * extent.u_axis + extent.min_v * extent.v_axis,
        extent.min_u * extent.u_axis + extent.max_v * extent.v_axis,
        extent.max_u * extent.u_axis + extent.min_v * extent.v_axis,
        extent.max_u * extent.u_axis + extent.max_v * extent.v_axis,
    ]
    base = -plane.d * plane.n
    pts = np.array([base + r + s * dist * plane.n for r in rect for s in (-1.0, 1.0)])
    lo = np.floor(pts.min(axis=0) / grid_cfg.volume_edge).astype(int)
    hi = np.floor(pts.max(axis=0) / grid_cfg.volume_edge).astype(int)
    return lo, hi


def propagate(
    planes: list[RefinedPlane],
    grid: VolumeGrid,
    cfg: MergeConfig,
    allocate_missing: bool = True,
) -> PropagationResult:
    """Insert each refined plane's id into the Q set of every volume whose box
    intersects the plane's slab and whose footprint lies inside the extent
    rectangle inflated by one volume edge.

    Volumes inside that region that were never observed are allocated empty
    (when allowed) so later hole filling has voxels to write into.
    """
    grid_cfg = grid.config
    result = PropagationResult()
    half = 0.5 * grid_cfg.volume_edge
    for refined in planes:
        if refined.extent is None:
            continue
        extent = refined.extent.inflated(grid_cfg.volume_edge)
        lo, hi = _slab_coord_range(refined.plane, refined.extent, cfg.propagate_dist, grid_cfg)
        normal = refined.plane.n
        support_radius = half * float(np.abs(normal).sum())
        for cx in range(lo[0], hi[0] + 1):
            for cy in range(lo[1], hi[1] + 1):
                for cz in range(lo[2], hi[2] + 1):
                    coord = (cx, cy, cz)
                    center = grid_cfg.volume_center(coord)
                    if abs(refined.plane.signed_distance(center)) > cfg.propagate_dist + support_radius:
                        continue
                    corners = aabb_corners(*grid_cfg.volume_bounds(coord))
                    us = corners @ extent.u_axis
                    vs = corners @ extent.v_axis
                    if not (
                        us.min() >= extent.min_u
                        and us.max() <= extent.max_u
                        and vs.min() >= extent.min_v
                        and vs.max() <= extent.max_v
                    ):
                        continue
                    volume = grid.get(coord)
                    if volume is None:
                        if not allocate_missing:
                            continue
                        volume = grid.get_or_create(coord)
                    is_new = refined.id not in volume.refined_ids
                    volume.refined_ids.add(refined.id)
                    result.note(refined.id, coord, is_new)
    return result
