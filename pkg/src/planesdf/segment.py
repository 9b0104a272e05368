"""Semantic labels for refined planes and connectivity-based object
segmentation of the non-planar mesh remainder."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, angle_between, triangle_areas
from .grid import Coord, VolumeGrid
from .meshing import MeshSet, VolumeMesh
from .merge import RefinedPlane
from .refine import DENOISE_AND_FILL, apply_correction

log = logging.getLogger(__name__)

LABEL_FLOOR = "floor"
LABEL_WALL = "wall"
LABEL_CEILING = "ceiling"
LABEL_OTHER = "other"

STRUCTURAL_LABELS = (LABEL_WALL, LABEL_FLOOR, LABEL_CEILING)


@dataclass(frozen=True)
class LabelRules:
    min_support: int = 4
    gravity_angle_tol_deg: float = 10.0
    min_object_vertices: int = 50

    def __post_init__(self):
        if not 0 < self.gravity_angle_tol_deg < 45:
            raise ValueError("gravity_angle_tol_deg must be in (0, 45)")
        if self.min_support < 1:
            raise ValueError("min_support must be at least 1")


def label_plane(refined: RefinedPlane, rules: LabelRules, gravity_up: Array) -> str:
    """Floor/wall/ceiling by support area (candidate count) and the angle of
    the normal against gravity.  Fusion orients normals into observed free
    space, which is what separates floors (normal up) from ceilings."""
    if refined.support < rules.min_support:
        return LABEL_OTHER
    up = np.asarray(gravity_up, dtype=np.float64)
    angle = np.rad2deg(angle_between(refined.plane.n, up))
    tol = rules.gravity_angle_tol_deg
    if angle <= tol:
        return LABEL_FLOOR
    if angle >= 180.0 - tol:
        return LABEL_CEILING
    if abs(angle - 90.0) <= tol:
        return LABEL_WALL
    return LABEL_OTHER


def label_planes(
    planes: dict[int, RefinedPlane], rules: LabelRules, gravity_up: Array
) -> None:
    for refined in planes.values():
        refined.label = label_plane(refined, rules, gravity_up)


@dataclass
class ObjectSegment:
    object_id: int
    vertex_count: int
    triangle_count: int
    surface_area: float
    aabb_min: Array
    aabb_max: Array
    vertex_keys: set = field(default_factory=set, repr=False)


def segment_objects(
    meshes: dict[Coord, VolumeMesh],
    min_object_vertices: int = 50,
) -> list[ObjectSegment]:
    """Connected components of the mesh after removing plane-tagged vertices.

    Vertices are identified by their global edge keys, which stitches volume
    meshes together across seams.  Components are grown breadth-first over
    triangle edges whose endpoints both survived plane removal; components
    below the vertex floor are discarded as noise.
    """
    position_of: dict = {}
    adjacency: dict = {}
    tri_lists: dict = {}
    for coord in sorted(meshes):
        mesh = meshes[coord]
        keep = mesh.vertex_plane_id < 0
        for i, key in enumerate(mesh.edge_keys):
            if keep[i] and key not in position_of:
                position_of[key] = mesh.positions[i]
        for tri in mesh.triangles:
            kept = [mesh.edge_keys[v] for v in tri if keep[v]]
            if len(kept) < 2:
                continue
            for a in range(len(kept)):
                for b in range(a + 1, len(kept)):
                    adjacency.setdefault(kept[a], set()).add(kept[b])
                    adjacency.setdefault(kept[b], set()).add(kept[a])
            if len(kept) == 3:
                area = float(
                    triangle_areas(
                        mesh.positions, np.asarray([list(tri)], dtype=np.int64)
                    )[0]
                )
                tri_lists.setdefault(tuple(sorted(map(tuple, (kept)))), []).append(area)

    visited: set = set()
    segments: list[ObjectSegment] = []
    next_id = 1
    for start in sorted(position_of):
        if start in visited or start not in adjacency:
            continue
        component = []
        queue = deque([start])
        visited.add(start)
        while queue:
            node = queue.popleft()
            component.append(node)
            for neighbor in sorted(adjacency.get(node, ())):
                if neighbor not in visited:
                    visited.add(neighbor)
                    queue.append(neighbor)
        if len(component) < min_object_vertices:
            continue
        members = set(component)
        tri_count = 0
        area = 0.0
        for tri_key, areas in tri_lists.items():
            if all(k in members for k in tri_key):
                tri_count += len(areas)
                area += sum(areas)
        points = np.array([position_of[k] for k in component])
        segments.append(
            ObjectSegment(
                object_id=next_id,
                vertex_count=len(component),
                triangle_count=tri_count,
                surface_area=area,
                aabb_min=points.min(axis=0),
                aabb_max=points.max(axis=0),
                vertex_keys=members,
            )
        )
        next_id += 1
    return segments


def walls_only_mesh(
    grid: VolumeGrid,
    planes: dict[int, RefinedPlane],
    strict_product_band: bool = False,
) -> dict[Coord, VolumeMesh]:
    """Meshes of the structural planes alone: volumes are re-meshed against
    the wall/floor/ceiling corrections with filling enabled, and only
    triangles whose vertices all lie on those planes are kept."""
    structural = {i: r for i, r in planes.items() if r.label in STRUCTURAL_LABELS}
    if not structural:
        log.warning("walls_only_mesh: no wall, floor, or ceiling labels present")
        return {}
    coords = {
        coord
        for coord, volume in grid.volumes.items()
        if any(i in structural for i in volume.refined_ids)
    }
    shadow = MeshSet()
    apply_correction(
        grid,
        structural,
        DENOISE_AND_FILL,
        coords,
        shadow,
        strict_product_band=strict_product_band,
    )
    result: dict[Coord, VolumeMesh] = {}
    for coord, mesh in shadow.meshes.items():
        if mesh.num_triangles == 0:
            continue
        on_plane = mesh.vertex_plane_id >= 0
        keep_tri = on_plane[mesh.triangles].all(axis=1)
        if not keep_tri.any():
            continue
        result[coord] = VolumeMesh(
            coord=mesh.coord,
            edge_keys=mesh.edge_keys,
            positions=mesh.positions,
            triangles=mesh.triangles[keep_tri],
            vertex_plane_id=mesh.vertex_plane_id,
            vertex_fill=mesh.vertex_fill,
        )
    return result
