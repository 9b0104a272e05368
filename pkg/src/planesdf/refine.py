"""Applying refined planes to the SDF: noise removal, hole filling into
unobserved voxels, jitter gating of re-meshes, and planar quad simplification.

Correction is a meshing-time shadow field: the fused values and weights are
never overwritten, so merging stays idempotent and later observations can
still move the planes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, Plane, aabb_corners, angle_between
from .grid import Coord, VolumeGrid
from .meshing import MeshSet, VolumeMesh, extract_mesh
from .merge import MergeConfig, PlaneExtent, RefinedPlane

DENOISE_ONLY = "denoise"
DENOISE_AND_FILL = "denoise_and_fill"

VERTEX_PLANE_TOL = 1e-6


@dataclass
class CorrectionContext:
    planes: list[Plane]
    truncation: float
    mode: str = DENOISE_ONLY
    strict_product_band: bool = False


def corrected_sdf(x, phi: float, observed: bool, ctx: CorrectionContext) -> float:
    """Plane-corrected SDF value at a point.

    Case 1: two active planes have signed distances of mixed sign inside the
    band (the point sits behind one plane near an intersection); use the
    smallest signed distance.  Case 2: the point lies within the truncation
    band of the closest plane and either it was never observed (fill mode) or
    the plane agrees with the observation to within the band; use the closest
    plane's distance.  Case 3: keep the original value.  The result is always
    clamped to the truncation band.
    """
    tau = ctx.truncation
    planes = ctx.planes
    if not planes:
        return phi
    distances = [p.signed_distance(x) for p in planes]

    case1 = False
    if not ctx.strict_product_band:
        for i in range(len(distances)):
            for j in range(i + 1, len(distances)):
                product = distances[i] * distances[j]
                if -tau < product < 0.0:
                    case1 = True
                    break
            if case1:
                break
    else:
        for i in range(len(distances)):
            for j in range(i + 1, len(distances)):
                if (
                    distances[i] * distances[j] < 0.0
                    and abs(distances[i]) < tau
                    and abs(distances[j]) < tau
                ):
                    case1 = True
                    break
            if case1:
                break

    if case1:
        value = min(distances)
    else:
        d_closest = distances[0]
        for s in distances[1:]:
            if abs(s) < abs(d_closest):
                d_closest = s
        applies = abs(d_closest) < tau and (
            (not observed and ctx.mode == DENOISE_AND_FILL)
            or (observed and abs(d_closest - phi) < tau)
        )
        value = d_closest if applies else phi
    return min(max(value, -tau), tau)


def corrected_values(
    points: Array,
    phis: Array,
    observed: Array,
    ctx: CorrectionContext,
) -> Array:
    """Vectorized twin of corrected_sdf; identical arithmetic per element."""
    if not ctx.planes:
        return phis.copy()
    tau = ctx.truncation
    s = np.stack([p.signed_distances(points) for p in ctx.planes], axis=1)

    case1 = np.zeros(len(points), dtype=bool)
    n_planes = s.shape[1]
    for i in range(n_planes):
        for j in range(i + 1, n_planes):
            product = s[:, i] * s[:, j]
            if ctx.strict_product_band:
                case1 |= (product < 0.0) & (np.abs(s[:, i]) < tau) & (np.abs(s[:, j]) < tau)
            else:
                case1 |= (-tau < product) & (product < 0.0)

    d_min = s.min(axis=1)
    d_closest = s[np.arange(len(points)), np.argmin(np.abs(s), axis=1)]
    if ctx.mode == DENOISE_AND_FILL:
        unobserved_ok = ~observed
    else:
        unobserved_ok = np.zeros(len(points), dtype=bool)
    case2 = (np.abs(d_closest) < tau) & (
        unobserved_ok | (observed & (np.abs(d_closest - phis) < tau))
    )
    value = np.where(case1, d_min, np.where(case2, d_closest, phis))
    return np.clip(value, -tau, tau)


@dataclass
class JitterGateState:
    """Last-meshed coefficients per refined plane id plus the change gates."""

    angle_gate_deg: float = 1.0
    offset_gate: float = 0.01
    coefficients: dict[int, Plane] = field(default_factory=dict)


def jitter_gate(plane_id: int, new_plane: Plane, state: JitterGateState) -> bool:
    """True when the plane moved enough that its volumes must re-mesh; the
    stored coefficients update only then and otherwise stay authoritative."""
    old = state.coefficients.get(plane_id)
    if old is not None:
        angle = np.rad2deg(angle_between(new_plane.n, old.n))
        if angle <= state.angle_gate_deg and abs(new_plane.d - old.d) <= state.offset_gate:
            return False
    state.coefficients[plane_id] = new_plane
    return True


class PlaneStore:
    """Persistent refined planes across frames.

    Each merge pass produces fresh plane clusters; the store matches them to
    known ids by the same angle/distance compatibility used for merging, runs
    the jitter gate per id, and keeps the gate's stable coefficients as the
    ones meshing actually uses.
    """

    def __init__(self, gate: JitterGateState | None = None):
        self.gate = gate or JitterGateState()
        self.planes: dict[int, RefinedPlane] = {}
        self._next_id = 0

    def update_from_merge(
        self, merged: list[RefinedPlane], cfg: MergeConfig
    ) -> tuple[set[int], set[int]]:
        """Returns (ids active this pass, ids whose gate fired)."""
        active: set[int] = set()
        fired: set[int] = set()
        claimed: set[int] = set()
        order = sorted(merged, key=lambda p: (-p.support, p.id))
        for new in order:
            best_id = None
            best_angle = np.deg2rad(cfg.angle_eps_deg)
            anchor = new.anchor()
            for pid, stored in self.planes.items():
                if pid in claimed:
                    continue
                angle = angle_between(new.plane.n, stored.plane.n)
                if angle > best_angle:
                    continue
                if abs(stored.plane.signed_distance(anchor)) >= cfg.dist_lambda:
                    continue
                best_angle = angle
                best_id = pid
            if best_id is None:
                best_id = self._next_id
                self._next_id += 1
            claimed.add(best_id)
            if jitter_gate(best_id, new.plane, self.gate):
                fired.add(best_id)
            previous = self.planes.get(best_id)
            self.planes[best_id] = RefinedPlane(
                id=best_id,
                plane=self.gate.coefficients[best_id],
                support=new.support,
                member_coords=set(new.member_coords),
                label=previous.label if previous is not None else "other",
                extent=new.extent,
            )
            active.add(best_id)
        return active, fired

    def by_id(self) -> dict[int, RefinedPlane]:
        return dict(self.planes)


class CorrectedField:
    """Block provider that mixes refined planes into the fused SDF.

    Every voxel is corrected with the Q set of the volume that owns it, so a
    seam corner gets the same value no matter which neighbor meshes it.  In
    fill mode, unobserved voxels inside some plane's truncation slab and
    extent rectangle become valid synthetic samples.
    """

    def __init__(
        self,
        grid: VolumeGrid,
        planes_by_id: dict[int, RefinedPlane],
        mode: str = DENOISE_ONLY,
        strict_product_band: bool = False,
    ):
        self.grid = grid
        self.planes_by_id = planes_by_id
        self.mode = mode
        self.strict_product_band = strict_product_band
        self._cache: dict[Coord, tuple] = {}

    def block(self, coord: Coord):
        coord = tuple(coord)
        cached = self._cache.get(coord)
        if cached is not None:
            return cached
        volume = self.grid.get(coord)
        if volume is None:
            return None
        ids = sorted(i for i in volume.refined_ids if i in self.planes_by_id)
        observed = volume.weight > 0
        measured = observed & (np.abs(volume.sdf) < self.grid.config.truncation)
        if not ids:
            blk = (volume.sdf, observed, volume.fill.copy(), measured)
            self._cache[coord] = blk
            return blk

        refined = [self.planes_by_id[i] for i in ids]
        ctx = CorrectionContext(
            planes=[r.plane for r in refined],
            truncation=self.grid.config.truncation,
            mode=self.mode,
            strict_product_band=self.strict_product_band,
        )
        points = self.grid.config.voxel_centers(coord).reshape(-1, 3)
        phis = volume.sdf.reshape(-1)
        obs_flat = observed.reshape(-1)
        values = corrected_values(points, phis, obs_flat, ctx)

        m = self.grid.config.volume_dim
        if self.mode == DENOISE_AND_FILL:
            eligible = np.zeros(len(points), dtype=bool)
            for r in refined:
                if r.extent is None:
                    continue
                s = r.plane.signed_distances(points)
                u = points @ r.extent.u_axis
                v = points @ r.extent.v_axis
                eligible |= (np.abs(s) < ctx.truncation) & r.extent.contains_uv(u, v)
            fill_flat = ~obs_flat & eligible
        else:
            fill_flat = np.zeros(len(points), dtype=bool)
        valid = obs_flat | fill_flat
        blk = (
            values.reshape(m, m, m),
            valid.reshape(m, m, m),
            (fill_flat | volume.fill.reshape(-1)).reshape(m, m, m),
            measured,
        )
        self._cache[coord] = blk
        return blk


def assign_vertex_planes(
    mesh: VolumeMesh,
    planes: list[RefinedPlane],
    tol: float,
) -> None:
    """Tag mesh vertices lying on a refined plane with that plane's id.

    Corrected planar volumes produce vertices exactly on the plane (linear
    interpolation of an affine field); a half-voxel tolerance additionally
    absorbs junction cells, whose vertices interpolate between two planes'
    distance fields and land a few millimeters off both.
    """
    if mesh.num_vertices == 0 or not planes:
        return
    best = np.full(mesh.num_vertices, np.inf)
    ids = np.full(mesh.num_vertices, -1, dtype=np.int64)
    for refined in sorted(planes, key=lambda r: r.id):
        dist = np.abs(refined.plane.signed_distances(mesh.positions))
        better = (dist <= tol) & (dist < best)
        best[better] = dist[better]
        ids[better] = refined.id
    mesh.vertex_plane_id = ids


def apply_correction(
    grid: VolumeGrid,
    planes_by_id: dict[int, RefinedPlane],
    mode: str,
    coords,
    mesh_set: MeshSet,
    strict_product_band: bool = False,
) -> set[Coord]:
    """Re-mesh the given volumes against the plane-corrected shadow field and
    tag their vertices with plane ids.  Returns the coords actually meshed."""
    field_provider = CorrectedField(grid, planes_by_id, mode, strict_product_band)
    assign_tol = 0.75 * grid.config.voxel_size
    remeshed: set[Coord] = set()
    for coord in sorted(tuple(c) for c in coords):
        volume = grid.get(coord)
        if volume is None:
            continue
        mesh = extract_mesh(grid, coord, field=field_provider)
        active = [planes_by_id[i] for i in sorted(volume.refined_ids) if i in planes_by_id]
        assign_vertex_planes(mesh, active, assign_tol)
        mesh_set.update(mesh)
        volume.last_meshed_planes = {
            r.id: (tuple(r.plane.n), r.plane.d) for r in active
        }
        remeshed.add(coord)
    return remeshed


def _clip_polygon_halfspace(polygon: Array, normal: Array, offset: float) -> Array:
    """Sutherland-Hodgman step: keep the region with normal.p + offset <= 0."""
    if len(polygon) == 0:
        return polygon
    inside = polygon @ normal + offset <= 1e-12
    result = []
    count = len(polygon)
    for i in range(count):
        j = (i + 1) % count
        p_i, p_j = polygon[i], polygon[j]
        if inside[i]:
            result.append(p_i)
            if not inside[j]:
                t = (polygon[i] @ normal + offset) / ((polygon[i] - polygon[j]) @ normal)
                result.append(p_i + t * (p_j - p_i))
        elif inside[j]:
            t = (polygon[i] @ normal + offset) / ((polygon[i] - polygon[j]) @ normal)
            result.append(p_i + t * (p_j - p_i))
    return np.array(result) if result else np.zeros((0, 3))


def plane_box_polygon(plane: Plane, lo: Array, hi: Array) -> Array:
    """Convex polygon of the plane clipped by an axis-aligned box (3-6 gon)."""
    u, v = plane.basis()
    center = plane.project(0.5 * (np.asarray(lo) + np.asarray(hi)))
    radius = float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))
    polygon = np.array(
        [
            center - radius * u - radius * v,
            center + radius * u - radius * v,
            center + radius * u + radius * v,
            center - radius * u + radius * v,
        ]
    )
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        polygon = _clip_polygon_halfspace(polygon, -e, float(lo[axis]))
        polygon = _clip_polygon_halfspace(polygon, e, -float(hi[axis]))
        if len(polygon) == 0:
            break
    return polygon


def simplify_planar_volume(
    grid: VolumeGrid,
    coord: Coord,
    planes: list[RefinedPlane],
    mesh: VolumeMesh,
    tol: float = VERTEX_PLANE_TOL,
) -> VolumeMesh:
    """Replace a volume mesh that is one flat plane crossing the whole box by
    the plane's clipped polygon (two triangles for the common quad case, a
    triangle fan otherwise).  Returns the input mesh when the volume holds
    anything else."""
    if mesh.num_vertices == 0 or not planes:
        return mesh
    owner: RefinedPlane | None = None
    for refined in sorted(planes, key=lambda r: r.id):
        dist = np.abs(refined.plane.signed_distances(mesh.positions))
        if dist.max() <= tol:
            owner = refined
            break
    if owner is None:
        return mesh
    lo, hi = grid.config.volume_bounds(coord)
    corner_s = owner.plane.signed_distances(aabb_corners(lo, hi))
    if not (corner_s.min() < 0.0 < corner_s.max()):
        return mesh
    polygon = plane_box_polygon(owner.plane, lo, hi)
    if len(polygon) < 3:
        return mesh

    # Wind the fan so its normals agree with the plane normal.
    edge1 = polygon[1] - polygon[0]
    edge2 = polygon[2] - polygon[0]
    if float(np.cross(edge1, edge2) @ owner.plane.n) < 0:
        polygon = polygon[::-1].copy()

    n_vertices = len(polygon)
    triangles = np.array(
        [[0, i, i + 1] for i in range(1, n_vertices - 1)], dtype=np.int32
    )
    all_fill = bool(mesh.vertex_fill.all()) if mesh.num_vertices else False
    return VolumeMesh(
        coord=mesh.coord,
        edge_keys=[(i, owner.id, 0, 3) for i in range(n_vertices)],
        positions=polygon,
        triangles=triangles,
        vertex_plane_id=np.full(n_vertices, owner.id, dtype=np.int64),
        vertex_fill=np.full(n_vertices, all_fill, dtype=bool),
    )
