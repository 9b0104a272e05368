"""Per-volume marching-cubes extraction over the dual lattice of voxel centers.

Cell corners are voxel centers; each volume meshes the m^3 cells whose base
corner it owns, reading a one-voxel border from its neighbors so adjacent
volume meshes share seam vertices exactly (identical edge keys, identical
interpolation inputs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, triangle_areas
from .grid import Coord, VolumeGrid
from .mc_tables import EDGE_AXIS, EDGE_BASE_OFFSET, EDGE_CORNERS, CORNER_OFFSETS, TRI_TABLE

# An edge key is (gx, gy, gz, axis): the lattice coordinates of the edge's
# lower voxel-center corner plus the axis it runs along.  Simplified quad
# meshes use axis codes >= 3 so their synthetic keys can never collide.
EdgeKey = tuple[int, int, int, int]


@dataclass
class VolumeMesh:
    coord: Coord
    edge_keys: list[EdgeKey]
    positions: Array  # (V, 3) float64
    triangles: Array  # (T, 3) int32
    vertex_plane_id: Array  # (V,) int64, -1 where unassigned
    vertex_fill: Array  # (V,) bool, True when both source voxels were synthetic

    @classmethod
    def empty(cls, coord: Coord) -> "VolumeMesh":
        return cls(
            coord=coord,
            edge_keys=[],
            positions=np.zeros((0, 3)),
            triangles=np.zeros((0, 3), dtype=np.int32),
            vertex_plane_id=np.zeros(0, dtype=np.int64),
            vertex_fill=np.zeros(0, dtype=bool),
        )

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_fill(self) -> Array:
        """Triangles made purely of synthetic geometry (all three vertices)."""
        if self.num_triangles == 0:
            return np.zeros(0, dtype=bool)
        return self.vertex_fill[self.triangles].all(axis=1)

    def area(self) -> float:
        return float(triangle_areas(self.positions, self.triangles).sum())


class SdfBlockField:
    """Read access to per-volume (values, valid, fill, measured) blocks.

    The raw field exposes fused SDF values where weight > 0.  Correction
    layers (see refine.CorrectedField) present the same interface so meshing
    is agnostic to whether it reads raw or plane-corrected values.  The
    ``measured`` channel marks voxels holding an actual surface-band sample
    (observed and strictly inside the truncation band); free-space voxels
    clamped to the band edge do not localize any surface.
    """

    def __init__(self, grid: VolumeGrid):
        self.grid = grid

    def block(self, coord: Coord):
        vol = self.grid.get(coord)
        if vol is None:
            return None
        observed = vol.weight > 0
        measured = observed & (np.abs(vol.sdf) < self.grid.config.truncation)
        return vol.sdf, observed, vol.fill, measured


def assemble_corner_block(field, grid: VolumeGrid, coord: Coord):
    """Gather the (m+1)^3 cell-corner values for one volume, reading the +1
    border layers from up to seven neighbor volumes.  Missing neighbors leave
    the border invalid, so boundary cells simply emit no triangles there."""
    m = grid.config.volume_dim
    values = np.zeros((m + 1, m + 1, m + 1))
    valid = np.zeros((m + 1, m + 1, m + 1), dtype=bool)
    fill = np.zeros((m + 1, m + 1, m + 1), dtype=bool)
    measured = np.zeros((m + 1, m + 1, m + 1), dtype=bool)
    cx, cy, cz = coord
    for ox in (0, 1):
        for oy in (0, 1):
            for oz in (0, 1):
                blk = field.block((cx + ox, cy + oy, cz + oz))
                if blk is None:
                    continue
                sx = slice(0, m) if ox == 0 else slice(m, m + 1)
                sy = slice(0, m) if oy == 0 else slice(m, m + 1)
                sz = slice(0, m) if oz == 0 else slice(m, m + 1)
                bx = slice(0, m) if ox == 0 else slice(0, 1)
                by = slice(0, m) if oy == 0 else slice(0, 1)
                bz = slice(0, m) if oz == 0 else slice(0, 1)
                values[sx, sy, sz] = blk[0][bx, by, bz]
                valid[sx, sy, sz] = blk[1][bx, by, bz]
                fill[sx, sy, sz] = blk[2][bx, by, bz]
                measured[sx, sy, sz] = blk[3][bx, by, bz]
    return values, valid, fill, measured


def extract_mesh(grid: VolumeGrid, coord: Coord, field=None) -> VolumeMesh:
    """Marching cubes over one volume's cells; clears the volume's dirty flag.

    Raises KeyError for an unallocated volume.  Cells with any invalid corner
    are skipped.  Vertex positions are found by linear interpolation of the
    corner values along the crossing edge, which is exact for affine fields.
    """
    volume = grid.require(coord)
    if field is None:
        field = SdfBlockField(grid)
    cfg = grid.config
    m = cfg.volume_dim
    values, valid, fill, measured = assemble_corner_block(field, grid, coord)

    inside = (values < 0.0) & valid
    cube_index = np.zeros((m, m, m), dtype=np.int32)
    cell_valid = np.ones((m, m, m), dtype=bool)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        corner_inside = inside[ox : ox + m, oy : oy + m, oz : oz + m]
        cube_index |= corner_inside.astype(np.int32) << bit
        cell_valid &= valid[ox : ox + m, oy : oy + m, oz : oz + m]
    surface = cell_valid & (cube_index != 0) & (cube_index != 255)

    volume.dirty = False
    if not surface.any():
        return VolumeMesh.empty(coord)

    cells = np.argwhere(surface)  # (N, 3) base corner of each surface cell
    tris = TRI_TABLE[cube_index[surface]]  # (N, 16)
    slot_mask = tris >= 0
    cell_rep = np.repeat(np.arange(len(cells)), slot_mask.sum(axis=1))
    edge_ids = tris[slot_mask].astype(np.int64)

    base_global = coord * np.array([m, m, m], dtype=np.int64)
    edge_base = cells[cell_rep] + EDGE_BASE_OFFSET[edge_ids]  # local lattice coords
    edge_axis = EDGE_AXIS[edge_ids]
    keys = np.column_stack([edge_base + base_global, edge_axis])
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)

    ulocal = unique_keys[:, :3] - base_global
    uaxis = unique_keys[:, 3]
    c0 = ulocal
    c1 = ulocal + np.eye(3, dtype=np.int64)[uaxis]
    v0 = values[c0[:, 0], c0[:, 1], c0[:, 2]]
    v1 = values[c1[:, 0], c1[:, 1], c1[:, 2]]
    origin = cfg.volume_origin(coord)
    p0 = origin + (c0 + 0.5) * cfg.voxel_size
    p1 = origin + (c1 + 0.5) * cfg.voxel_size
    t = v0 / (v0 - v1)
    positions = p0 + t[:, None] * (p1 - p0)
    # A crossing is synthetic when plane-filled data contributed to it and no
    # surface-band measurement pinned it down.
    fill0 = fill[c0[:, 0], c0[:, 1], c0[:, 2]]
    fill1 = fill[c1[:, 0], c1[:, 1], c1[:, 2]]
    meas0 = measured[c0[:, 0], c0[:, 1], c0[:, 2]]
    meas1 = measured[c1[:, 0], c1[:, 1], c1[:, 2]]
    vertex_fill = (fill0 | fill1) & ~meas0 & ~meas1

    triangles = inverse.reshape(-1, 3).astype(np.int32)
    # Flip winding so face normals point toward positive SDF (free space).
    triangles = triangles[:, ::-1].copy()

    return VolumeMesh(
        coord=coord,
        edge_keys=[tuple(int(v) for v in row) for row in unique_keys],
        positions=positions,
        triangles=triangles,
        vertex_plane_id=np.full(len(unique_keys), -1, dtype=np.int64),
        vertex_fill=vertex_fill,
    )


def face_normals(mesh: VolumeMesh) -> Array:
    a = mesh.positions[mesh.triangles[:, 0]]
    b = mesh.positions[mesh.triangles[:, 1]]
    c = mesh.positions[mesh.triangles[:, 2]]
    return np.cross(b - a, c - a)


def average_face_normal(mesh: VolumeMesh) -> Array:
    """Area-weighted mean face direction; zero vector for an empty mesh."""
    if mesh.num_triangles == 0:
        return np.zeros(3)
    total = face_normals(mesh).sum(axis=0)
    norm = np.linalg.norm(total)
    return total / norm if norm > 1e-12 else np.zeros(3)


@dataclass
class MeshSet:
    """Current mesh snapshot of the map: one mesh per re-meshed volume."""

    meshes: dict[Coord, VolumeMesh] = field(default_factory=dict)

    def update(self, mesh: VolumeMesh) -> None:
        self.meshes[mesh.coord] = mesh

    def total_area(self) -> float:
        return float(sum(m.area() for m in self.meshes.values()))

    def copy_refs(self) -> dict[Coord, VolumeMesh]:
        return dict(self.meshes)


def merge_meshes(meshes) -> tuple[Array, Array, Array, Array]:
    """Concatenate volume meshes into one indexed mesh, deduplicating seam
    vertices by their global edge keys.

    Returns (positions, triangles, plane_ids, fill_flags).
    """
    index_of: dict[EdgeKey, int] = {}
    positions: list[Array] = []
    plane_ids: list[int] = []
    fills: list[bool] = []
    tri_rows: list[Array] = []
    for coord in sorted(meshes):
        mesh = meshes[coord]
        local_to_global = np.empty(mesh.num_vertices, dtype=np.int64)
        for i, key in enumerate(mesh.edge_keys):
            j = index_of.get(key)
            if j is None:
                j = len(positions)
                index_of[key] = j
                positions.append(mesh.positions[i])
                plane_ids.append(int(mesh.vertex_plane_id[i]))
                fills.append(bool(mesh.vertex_fill[i]))
            local_to_global[i] = j
        if mesh.num_triangles:
            tri_rows.append(local_to_global[mesh.triangles])
    if not positions:
        return (
            np.zeros((0, 3)),
            np.zeros((0, 3), dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=bool),
        )
    tri = np.vstack(tri_rows) if tri_rows else np.zeros((0, 3), dtype=np.int64)
    return (
        np.vstack(positions),
        tri,
        np.array(plane_ids, dtype=np.int64),
        np.array(fills, dtype=bool),
    )
