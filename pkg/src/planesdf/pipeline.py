"""Frame loop wiring fusion, candidate fitting, merging, propagation,
correction, and metrics into one reconstruction run."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import MERGE_RANSAC, RunConfig
from .detect import all_candidates, generate_candidates
from .evaluate import FrameMetrics, mesh_rmsd
from .fusion import DepthFrame, integrate
from .grid import Coord, VolumeGrid
from .meshing import MeshSet, extract_mesh
from .merge import merge_ransac, merge_region_growing, propagate
from .refine import (
    DENOISE_AND_FILL,
    DENOISE_ONLY,
    PlaneStore,
    apply_correction,
    simplify_planar_volume,
)
from .segment import label_planes, segment_objects, walls_only_mesh


def _stage_seed(base_seed: int, frame_index: int, stage: int) -> int:
    ss = np.random.SeedSequence([base_seed, frame_index, stage])
    return int(ss.generate_state(1)[0])


@dataclass
class Pipeline:
    config: RunConfig
    grid: VolumeGrid = None  # type: ignore[assignment]
    store: PlaneStore = None  # type: ignore[assignment]
    meshes: MeshSet = field(default_factory=MeshSet)
    metrics: list[FrameMetrics] = field(default_factory=list)
    frame_index: int = 0

    def __post_init__(self):
        if self.grid is None:
            self.grid = VolumeGrid(self.config.grid)
        if self.store is None:
            self.store = PlaneStore(self.config.gate_state())
        self._prev_meshes: dict = {}

    @property
    def fill_mode(self) -> str:
        return DENOISE_AND_FILL if self.config.fill else DENOISE_ONLY

    def _within_radius(self, coord: Coord, camera_pos) -> bool:
        center = self.grid.config.volume_center(coord)
        return float(np.linalg.norm(center - camera_pos)) <= self.config.re_mesh_radius

    def process_frame(self, frame: DepthFrame) -> FrameMetrics:
        cfg = self.config
        camera_pos = frame.pose[:3, 3]
        metrics = FrameMetrics(frame_index=self.frame_index, timestamp=frame.timestamp)

        t0 = time.perf_counter()
        dirty = integrate(self.grid, frame)
        fusion_s = time.perf_counter() - t0

        fired: set[int] = set()
        inserted_coords: set[Coord] = set()
        plane_event_coords: set[Coord] = set()
        if cfg.use_planes:
            t1 = time.perf_counter()
            generate_candidates(
                self.grid,
                dirty,
                cfg.candidate_method,
                cfg.fit,
                base_seed=cfg.seed,
                frame_index=self.frame_index,
                threads=cfg.threads,
            )
            metrics.candidates_ms = (time.perf_counter() - t1) * 1e3

            t2 = time.perf_counter()
            candidates = all_candidates(self.grid)
            if cfg.merge_method == MERGE_RANSAC:
                merged = merge_ransac(
                    candidates,
                    cfg.merge,
                    self.grid.config,
                    rng_seed=_stage_seed(cfg.seed, self.frame_index, 1),
                )
            else:
                merged = merge_region_growing(candidates, cfg.merge, self.grid.config)
            _, fired = self.store.update_from_merge(merged, cfg.merge)
            label_planes(self.store.planes, cfg.labels, frame.gravity_up)
            prop = propagate(
                list(self.store.planes.values()), self.grid, cfg.merge, allocate_missing=True
            )
            metrics.merging_ms = (time.perf_counter() - t2) * 1e3
            metrics.candidate_count = len(candidates)
            metrics.refined_count = len(merged)

            inserted_coords = set(prop.inserted.keys())
            for plane_id in fired:
                plane_event_coords |= prop.volumes_by_plane.get(plane_id, set())
            plane_event_coords |= inserted_coords

        # Plane-owned volumes re-mesh only on plane events (new membership or a
        # gate firing); everything else re-meshes whenever fusion touched it.
        t3 = time.perf_counter()
        raw_dirty = {
            c for c in dirty if not (cfg.use_planes and self.grid.volumes[c].refined_ids)
        }
        to_mesh = {
            c
            for c in raw_dirty | plane_event_coords
            if self._within_radius(c, camera_pos)
        }
        remeshed = self._mesh_volumes(to_mesh)
        fusion_s += time.perf_counter() - t3
        metrics.fusion_ms = fusion_s * 1e3
        metrics.remeshed_count = len(remeshed)

        current = self.meshes.copy_refs()
        metrics.rmsd_m = mesh_rmsd(self._prev_meshes, current)
        if cfg.use_planes:
            plane_owned = {
                c
                for c, vol in self.grid.volumes.items()
                if vol.refined_ids & self.store.planes.keys()
            }
            metrics.rmsd_plane_m = mesh_rmsd(self._prev_meshes, current, coords=plane_owned)
        self._prev_meshes = current

        self.metrics.append(metrics)
        self.frame_index += 1
        return metrics

    def _mesh_volumes(self, coords) -> set[Coord]:
        cfg = self.config
        if cfg.use_planes and cfg.denoise:
            return apply_correction(
                self.grid,
                self.store.by_id(),
                self.fill_mode,
                coords,
                self.meshes,
                strict_product_band=cfg.strict_product_band,
            )
        done: set[Coord] = set()
        for coord in sorted(tuple(c) for c in coords):
            if self.grid.get(coord) is None:
                continue
            self.meshes.update(extract_mesh(self.grid, coord))
            done.add(coord)
        return done

    def run(self, frames) -> None:
        for frame in frames:
            self.process_frame(frame)
        self.finalize()

    def finalize(self) -> None:
        """Re-mesh every volume against the final (gate-stable) planes so the
        exported model reflects the full extents; online metrics above are
        untouched.  Optionally collapses pure-plane volumes to quads."""
        self._mesh_volumes(set(self.grid.volumes.keys()))
        if self.config.use_planes and self.config.simplify_quads:
            planes = list(self.store.planes.values())
            for coord in self.grid.coords():
                mesh = self.meshes.meshes.get(coord)
                if mesh is None or mesh.num_triangles == 0:
                    continue
                self.meshes.update(
                    simplify_planar_volume(self.grid, coord, planes, mesh)
                )

    # Convenience entry points over the final state -------------------------

    def final_meshes(self):
        return self.meshes.meshes

    def object_segments(self):
        return segment_objects(self.meshes.meshes, self.config.labels.min_object_vertices)

    def structural_meshes(self):
        return walls_only_mesh(
            self.grid, self.store.by_id(), strict_product_band=self.config.strict_product_band
        )


STATE_SCHEMA = "planesdf.state/v1"


def save_state(pipeline: Pipeline, path) -> None:
    """Snapshot of the fused grid and refined planes, enough to re-mesh and
    segment later without the depth frames."""
    coords = pipeline.grid.coords()
    sdf = np.stack([pipeline.grid.volumes[c].sdf for c in coords]) if coords else np.zeros((0,))
    weight = (
        np.stack([pipeline.grid.volumes[c].weight for c in coords]) if coords else np.zeros((0,))
    )
    fill = np.stack([pipeline.grid.volumes[c].fill for c in coords]) if coords else np.zeros((0,))
    ids_flat: list[int] = []
    ids_offsets = [0]
    for c in coords:
        ids_flat.extend(sorted(pipeline.grid.volumes[c].refined_ids))
        ids_offsets.append(len(ids_flat))
    store = pipeline.store.planes
    plane_ids = sorted(store.keys())
    plane_rows = []
    extent_rows = []
    member_flat: list[int] = []
    member_offsets = [0]
    labels = []
    for pid in plane_ids:
        refined = store[pid]
        plane_rows.append(list(refined.plane.n) + [refined.plane.d, float(refined.support)])
        labels.append(refined.label)
        ext = refined.extent
        extent_rows.append(
            list(ext.u_axis)
            + list(ext.v_axis)
            + [ext.min_u, ext.min_v, ext.max_u, ext.max_v]
            if ext is not None
            else [0.0] * 10
        )
        for coord in sorted(refined.member_coords):
            member_flat.extend(coord)
        member_offsets.append(len(member_flat) // 3)
    np.savez_compressed(
        path,
        schema=np.array(STATE_SCHEMA),
        voxel_size=pipeline.grid.config.voxel_size,
        volume_dim=pipeline.grid.config.volume_dim,
        truncation=pipeline.grid.config.truncation,
        max_weight=pipeline.grid.config.max_weight,
        coords=np.array(coords, dtype=np.int64).reshape(-1, 3),
        sdf=sdf,
        weight=weight,
        fill=fill,
        ids_flat=np.array(ids_flat, dtype=np.int64),
        ids_offsets=np.array(ids_offsets, dtype=np.int64),
        plane_ids=np.array(plane_ids, dtype=np.int64),
        plane_rows=np.array(plane_rows).reshape(-1, 5),
        plane_labels=np.array(labels),
        extent_rows=np.array(extent_rows).reshape(-1, 10),
        member_flat=np.array(member_flat, dtype=np.int64),
        member_offsets=np.array(member_offsets, dtype=np.int64),
    )


def load_state(path, config: RunConfig) -> Pipeline:
    from .geometry import Plane
    from .grid import VoxelGridConfig
    from .merge import PlaneExtent, RefinedPlane

    data = np.load(path, allow_pickle=False)
    if str(data["schema"]) != STATE_SCHEMA:
        raise ValueError(f"{path}: unsupported state schema {data['schema']!r}")
    grid_cfg = VoxelGridConfig(
        voxel_size=float(data["voxel_size"]),
        volume_dim=int(data["volume_dim"]),
        truncation=float(data["truncation"]),
        max_weight=float(data["max_weight"]),
    )
    pipeline = Pipeline(config=config, grid=VolumeGrid(grid_cfg))
    coords = data["coords"]
    ids_flat = data["ids_flat"]
    ids_offsets = data["ids_offsets"]
    for i, coord in enumerate(map(tuple, coords.tolist())):
        volume = pipeline.grid.get_or_create(coord)
        volume.sdf[:] = data["sdf"][i]
        volume.weight[:] = data["weight"][i]
        volume.fill[:] = data["fill"][i]
        volume.refined_ids = set(ids_flat[ids_offsets[i] : ids_offsets[i + 1]].tolist())
    member_flat = data["member_flat"].reshape(-1, 3)
    member_offsets = data["member_offsets"]
    for j, pid in enumerate(data["plane_ids"].tolist()):
        row = data["plane_rows"][j]
        ext_row = data["extent_rows"][j]
        extent = PlaneExtent(
            u_axis=ext_row[0:3].copy(),
            v_axis=ext_row[3:6].copy(),
            min_u=float(ext_row[6]),
            min_v=float(ext_row[7]),
            max_u=float(ext_row[8]),
            max_v=float(ext_row[9]),
        )
        members = {
            tuple(c)
            for c in member_flat[member_offsets[j] : member_offsets[j + 1]].tolist()
        }
        plane = Plane(row[0:3], float(row[3]))
        pipeline.store.planes[pid] = RefinedPlane(
            id=int(pid),
            plane=plane,
            support=int(row[4]),
            member_coords=members,
            label=str(data["plane_labels"][j]),
            extent=extent,
        )
        pipeline.store.gate.coefficients[int(pid)] = plane
        pipeline.store._next_id = max(pipeline.store._next_id, int(pid) + 1)
    return pipeline
