"""Spatially hashed truncated-SDF storage: fixed-size voxel blocks keyed by
integer volume coordinates, allocated only where measurements exist."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Array

Coord = tuple[int, int, int]


@dataclass(frozen=True)
class VoxelGridConfig:
    voxel_size: float = 0.03
    volume_dim: int = 16
    truncation: float = 0.10
    max_weight: float = 100.0

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.volume_dim < 2:
            raise ValueError("volume_dim must be at least 2")
        if self.truncation < 2 * self.voxel_size:
            raise ValueError("truncation must be at least two voxels")
        if self.max_weight < 1:
            raise ValueError("max_weight must be at least 1")

    @property
    def volume_edge(self) -> float:
        return self.voxel_size * self.volume_dim

    def volume_origin(self, coord: Coord) -> Array:
        return np.asarray(coord, dtype=np.float64) * self.volume_edge

    def volume_center(self, coord: Coord) -> Array:
        return self.volume_origin(coord) + 0.5 * self.volume_edge

    def volume_bounds(self, coord: Coord) -> tuple[Array, Array]:
        lo = self.volume_origin(coord)
        return lo, lo + self.volume_edge

    def local_centers(self) -> Array:
        """Voxel-center offsets from the volume origin, shape (m, m, m, 3)."""
        m = self.volume_dim
        axis = (np.arange(m) + 0.5) * self.voxel_size
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def voxel_centers(self, coord: Coord) -> Array:
        return self.volume_origin(coord) + self.local_centers()

    def coord_of_point(self, point: Array) -> Coord:
        c = np.floor(np.asarray(point, dtype=np.float64) / self.volume_edge).astype(int)
        return (int(c[0]), int(c[1]), int(c[2]))


@dataclass
class Volume:
    """One m^3 block of voxels plus the plane bookkeeping attached to it.

    ``sdf`` is only meaningful where ``weight > 0``; ``fill`` marks voxels
    whose value was synthesized from a refined plane rather than observed.
    """

    coord: Coord
    sdf: Array
    weight: Array
    fill: Array
    candidate: object | None = None
    refined_ids: set[int] = field(default_factory=set)
    dirty: bool = False
    last_meshed_planes: dict[int, tuple] = field(default_factory=dict)

    @classmethod
    def empty(cls, coord: Coord, config: VoxelGridConfig) -> "Volume":
        m = config.volume_dim
        return cls(
            coord=coord,
            sdf=np.zeros((m, m, m)),
            weight=np.zeros((m, m, m)),
            fill=np.zeros((m, m, m), dtype=bool),
        )

    def observed(self) -> Array:
        return self.weight > 0


class VolumeGrid:
    """Hash map from integer volume coordinates to voxel blocks."""

    def __init__(self, config: VoxelGridConfig | None = None):
        self.config = config or VoxelGridConfig()
        self.volumes: dict[Coord, Volume] = {}

    def __len__(self) -> int:
        return len(self.volumes)

    def __contains__(self, coord: Coord) -> bool:
        return tuple(coord) in self.volumes

    def get(self, coord: Coord) -> Volume | None:
        return self.volumes.get(tuple(coord))

    def require(self, coord: Coord) -> Volume:
        vol = self.volumes.get(tuple(coord))
        if vol is None:
            raise KeyError(f"volume {tuple(coord)} is not allocated")
        return vol

    def get_or_create(self, coord: Coord) -> Volume:
        key = (int(coord[0]), int(coord[1]), int(coord[2]))
        vol = self.volumes.get(key)
        if vol is None:
            vol = Volume.empty(key, self.config)
            self.volumes[key] = vol
        return vol

    def coords(self) -> list[Coord]:
        return sorted(self.volumes.keys())

    def voxel_centers(self, coord: Coord) -> Array:
        return self.config.voxel_centers(coord)
