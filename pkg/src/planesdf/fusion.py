"""Projective TSDF fusion of depth frames into the hashed volume grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Array, rotation_is_orthonormal
from .grid import Coord, VolumeGrid

DEPTH_MIN = 0.2
DEPTH_MAX = 6.0

DEPTH_WIDTH = 160
DEPTH_HEIGHT = 120


class FrameRejected(ValueError):
    """Raised when a depth frame fails its validity checks."""


@dataclass
class DepthFrame:
    """One depth image with camera intrinsics, camera-to-world pose and the
    gravity direction sensed at capture time.  Depth 0 marks invalid pixels."""

    depth: Array  # (H, W) meters
    fx: float
    fy: float
    cx: float
    cy: float
    pose: Array  # (4, 4) camera-to-world
    gravity_up: Array
    timestamp: float = 0.0

    def validate(self) -> None:
        if self.depth.ndim != 2:
            raise FrameRejected("depth image must be 2-D")
        if self.fx <= 0 or self.fy <= 0:
            raise FrameRejected("intrinsics fx/fy must be positive")
        if self.pose.shape != (4, 4) or not rotation_is_orthonormal(self.pose[:3, :3]):
            raise FrameRejected("pose rotation is not orthonormal")
        if abs(float(np.linalg.norm(self.gravity_up)) - 1.0) > 1e-6:
            raise FrameRejected("gravity_up must be a unit vector")

    def valid_mask(self) -> Array:
        # Out-of-range readings are skipped like dropouts, not fatal.
        return (self.depth >= DEPTH_MIN) & (self.depth <= DEPTH_MAX)

    def pixel_rays(self) -> Array:
        """Per-pixel view directions in camera coordinates, z normalized to 1."""
        h, w = self.depth.shape
        u, v = np.meshgrid(np.arange(w), np.arange(h))
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones((h, w))],
            axis=-1,
        )


def _band_volume_coords(grid: VolumeGrid, frame: DepthFrame) -> list[Coord]:
    """Volume coordinates crossed by the truncation band of any valid pixel.

    Sampling every half truncation step along each ray stays well inside the
    frustum's truncation-inflated hull, so allocation never escapes it.
    """
    cfg = grid.config
    valid = frame.valid_mask()
    if not valid.any():
        return []
    rays = frame.pixel_rays()[valid]
    depths = frame.depth[valid]
    pad = 0.5 * cfg.voxel_size
    steps = int(np.ceil(2 * (cfg.truncation + pad) / cfg.voxel_size)) + 1
    offsets = np.linspace(-cfg.truncation - pad, cfg.truncation + pad, steps)
    z = depths[:, None] + offsets[None, :]
    z = np.clip(z, 1e-3, None)
    points_cam = rays[:, None, :] * z[:, :, None]
    points_world = points_cam.reshape(-1, 3) @ frame.pose[:3, :3].T + frame.pose[:3, 3]
    coords = np.floor(points_world / cfg.volume_edge).astype(np.int64)
    # Pack to one int64 per coord: unique on packed keys is much faster than
    # row-wise unique, and map size stays far below the 2^20 packing range.
    offset = 1 << 20
    packed = ((coords[:, 0] + offset) << 42) | ((coords[:, 1] + offset) << 21) | (
        coords[:, 2] + offset
    )
    unique = np.unique(packed)
    out = []
    for key in unique:
        z = int(key & ((1 << 21) - 1)) - offset
        y = int((key >> 21) & ((1 << 21) - 1)) - offset
        x = int(key >> 42) - offset
        out.append((x, y, z))
    return out


def integrate(grid: VolumeGrid, frame: DepthFrame) -> set[Coord]:
    """Fuse one depth frame; returns the coords of volumes actually updated.

    Each voxel center in a touched volume is projected into the image; with
    projective signed distance s = depth - z_cam, voxels with s > -truncation
    take a weight-1 running-average update of clamp(s) and the weight is
    capped at max_weight.
    """
    frame.validate()
    cfg = grid.config
    coords = _band_volume_coords(grid, frame)
    if not coords:
        return set()

    m = cfg.volume_dim
    tau = cfg.truncation
    local = cfg.local_centers().reshape(-1, 3)
    origins = np.array([cfg.volume_origin(c) for c in coords])
    centers = origins[:, None, :] + local[None, :, :]  # (V, m^3, 3)
    flat = centers.reshape(-1, 3)

    world_to_cam_r = frame.pose[:3, :3].T
    cam_t = frame.pose[:3, 3]
    pts_cam = (flat - cam_t) @ world_to_cam_r.T
    z = pts_cam[:, 2]
    h, w = frame.depth.shape

    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.rint(frame.fx * pts_cam[:, 0] / z + frame.cx).astype(np.int64)
        v = np.rint(frame.fy * pts_cam[:, 1] / z + frame.cy).astype(np.int64)
    usable = (z > 1e-6) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    depth_sample = np.zeros(len(flat))
    depth_sample[usable] = frame.depth[v[usable], u[usable]]
    usable &= (depth_sample >= DEPTH_MIN) & (depth_sample <= DEPTH_MAX)

    s = depth_sample - z
    usable &= s > -tau
    if not usable.any():
        return set()

    sample = np.clip(s, -tau, tau)
    usable = usable.reshape(len(coords), -1)
    sample = sample.reshape(len(coords), -1)

    touched: set[Coord] = set()
    for i, coord in enumerate(coords):
        mask = usable[i]
        if not mask.any():
            continue
        vol = grid.get_or_create(coord)
        w_old = vol.weight.reshape(-1)[mask]
        sdf_old = vol.sdf.reshape(-1)[mask]
        new_sdf = (w_old * sdf_old + sample[i][mask]) / (w_old + 1.0)
        vol.sdf.reshape(-1)[mask] = new_sdf
        vol.weight.reshape(-1)[mask] = np.minimum(w_old + 1.0, cfg.max_weight)
        vol.dirty = True
        touched.add(coord)
    return touched
