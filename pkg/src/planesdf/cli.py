"""Command-line entry point: synth, reconstruct, eval, segment.

Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import io as io_mod
from .config import RunConfig, load_config, save_config
from .evaluate import AreaReport, FrameMetrics, area_table, summarize_run, timing_table
from .fusion import DepthFrame
from .pipeline import Pipeline, load_state, save_state
from .synth import CameraModel, load_scene, render_depth, save_scene, standard_scenes

log = logging.getLogger("planesdf")

METRICS_SCHEMA = "planesdf.metrics/v1"
CANDIDATES_SCHEMA = "planesdf.candidates/v1"
PLANES_SCHEMA = "planesdf.planes/v1"
AREA_SCHEMA = "planesdf.area/v1"
AREA_TOTAL_SCHEMA = "planesdf.area_total/v1"
OBJECTS_SCHEMA = "planesdf.objects/v1"

METRICS_HEADER = [
    "frame_index",
    "timestamp",
    "rmsd_m",
    "rmsd_plane_m",
    "fusion_ms",
    "candidates_ms",
    "merging_ms",
    "candidate_count",
    "refined_count",
    "remeshed_count",
]


class PipelineError(RuntimeError):
    pass


def _frame_name(timestamp: float) -> str:
    return f"depth_{timestamp:.6f}.pgm"


def cmd_synth(args) -> int:
    scenes = standard_scenes()
    if args.scene in scenes:
        scene = scenes[args.scene]
    elif Path(args.scene).exists():
        scene = load_scene(args.scene)
    else:
        print(
            f"error: unknown scene {args.scene!r} (catalog: {', '.join(sorted(scenes))})",
            file=sys.stderr,
        )
        return 2
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    camera = CameraModel()
    for index, (timestamp, pose) in enumerate(scene.trajectory):
        frame = render_depth(scene, pose, camera, seed=scene.seed + 9973 * index, timestamp=timestamp)
        io_mod.write_pgm(out / _frame_name(timestamp), frame.depth)
    io_mod.write_trajectory(out / "trajectory.txt", scene.trajectory)
    save_scene(scene, out / "scene.yaml")
    config = RunConfig(seed=scene.seed, gravity_up=tuple(float(v) for v in scene.gravity_up))
    save_config(config, out / "run_config.yaml")
    log.info("wrote %d frames to %s", len(scene.trajectory), out)
    return 0


def load_frames(frames_dir, config: RunConfig) -> list[DepthFrame]:
    frames_dir = Path(frames_dir)
    trajectory_path = frames_dir / "trajectory.txt"
    if not trajectory_path.exists():
        raise PipelineError(f"missing trajectory file {trajectory_path}")
    pose_by_stamp = {f"{t:.6f}": pose for t, pose in io_mod.read_trajectory(trajectory_path)}
    frames = []
    gravity = config.gravity()
    cam = config.camera
    for index, path in enumerate(sorted(frames_dir.glob("depth_*.pgm"))):
        stamp = path.stem[len("depth_") :]
        pose = pose_by_stamp.get(stamp)
        if pose is None:
            raise PipelineError(f"frame {index} ({path.name}): no trajectory entry for timestamp {stamp}")
        frames.append(
            DepthFrame(
                depth=io_mod.read_pgm(path),
                fx=cam.fx,
                fy=cam.fy,
                cx=cam.cx,
                cy=cam.cy,
                pose=pose,
                gravity_up=gravity,
                timestamp=float(stamp),
            )
        )
    if not frames:
        raise PipelineError(f"no depth frames found in {frames_dir}")
    return frames


def _metric_row(m: FrameMetrics):
    return [
        m.frame_index,
        m.timestamp,
        "" if m.rmsd_m is None else f"{m.rmsd_m:.9g}",
        "" if m.rmsd_plane_m is None else f"{m.rmsd_plane_m:.9g}",
        m.fusion_ms,
        m.candidates_ms,
        m.merging_ms,
        m.candidate_count,
        m.refined_count,
        m.remeshed_count,
    ]


def write_run_outputs(pipeline: Pipeline, out: Path) -> None:
    from .detect import all_candidates
    from .evaluate import area_report, per_plane_area
    from .meshing import merge_meshes

    out.mkdir(parents=True, exist_ok=True)
    save_config(pipeline.config, out / "run_config.yaml")
    io_mod.write_csv(
        out / "metrics.csv",
        METRICS_SCHEMA,
        METRICS_HEADER,
        [_metric_row(m) for m in pipeline.metrics],
    )
    candidates = all_candidates(pipeline.grid)
    io_mod.write_csv(
        out / "candidates.csv",
        CANDIDATES_SCHEMA,
        ["coord_x", "coord_y", "coord_z", "nx", "ny", "nz", "d", "support",
         "mean_abs_residual", "method", "fit_time_us"],
        [
            [c[0], c[1], c[2], cand.plane.n[0], cand.plane.n[1], cand.plane.n[2],
             cand.plane.d, cand.support, cand.mean_abs_residual, cand.method,
             cand.fit_time_us]
            for c, cand in sorted(candidates.items())
        ],
    )
    planes = pipeline.store.planes
    io_mod.write_csv(
        out / "planes.csv",
        PLANES_SCHEMA,
        ["id", "nx", "ny", "nz", "d", "support", "label",
         "extent_min_u", "extent_min_v", "extent_max_u", "extent_max_v"],
        [
            [pid, r.plane.n[0], r.plane.n[1], r.plane.n[2], r.plane.d, r.support,
             r.label,
             r.extent.min_u if r.extent else 0.0,
             r.extent.min_v if r.extent else 0.0,
             r.extent.max_u if r.extent else 0.0,
             r.extent.max_v if r.extent else 0.0]
            for pid, r in sorted(planes.items())
        ],
    )
    meshes = pipeline.final_meshes()
    per_plane = per_plane_area(meshes)
    io_mod.write_csv(
        out / "area.csv",
        AREA_SCHEMA,
        ["plane_id", "real_area_m2", "filled_area_m2"],
        [[pid, real, filled] for pid, (real, filled) in per_plane.items()],
    )
    report = area_report(meshes)
    io_mod.write_csv(
        out / "area_total.csv",
        AREA_TOTAL_SCHEMA,
        ["raw_m2", "filled_m2", "improve_percent"],
        [[report.raw_m2, report.filled_m2, report.improve_percent]],
    )

    positions, triangles, plane_ids, _ = merge_meshes(meshes)
    colors = np.full((len(positions), 3), 180, dtype=np.int64)
    segments = []
    if pipeline.config.segment_objects:
        segments = pipeline.object_segments()
        key_to_object = {}
        for seg in segments:
            for key in seg.vertex_keys:
                key_to_object[key] = seg.object_id
        # Recolor by walking the merged key order again.
        index_of = {}
        counter = 0
        for coord in sorted(meshes):
            for key in meshes[coord].edge_keys:
                if key not in index_of:
                    index_of[key] = counter
                    counter += 1
        for key, obj in key_to_object.items():
            colors[index_of[key]] = io_mod.object_color(obj)
    for i, pid in enumerate(plane_ids):
        if pid >= 0 and pid in planes:
            colors[i] = io_mod.LABEL_COLORS.get(planes[pid].label, (230, 200, 40))
    io_mod.write_ply(out / "mesh.ply", positions, triangles, colors)

    if pipeline.config.segment_objects:
        io_mod.write_csv(
            out / "objects.csv",
            OBJECTS_SCHEMA,
            ["object_id", "vertex_count", "triangle_count", "surface_area_m2",
             "min_x", "min_y", "min_z", "max_x", "max_y", "max_z"],
            [
                [s.object_id, s.vertex_count, s.triangle_count, s.surface_area,
                 s.aabb_min[0], s.aabb_min[1], s.aabb_min[2],
                 s.aabb_max[0], s.aabb_max[1], s.aabb_max[2]]
                for s in segments
            ],
        )
    if pipeline.config.walls_only:
        structural = pipeline.structural_meshes()
        positions, triangles, plane_ids, _ = merge_meshes(structural)
        colors = np.full((len(positions), 3), 180, dtype=np.int64)
        for i, pid in enumerate(plane_ids):
            if pid >= 0 and pid in planes:
                colors[i] = io_mod.LABEL_COLORS.get(planes[pid].label, (230, 200, 40))
        io_mod.write_ply(out / "walls_only.ply", positions, triangles, colors)


def cmd_reconstruct(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.method:
        overrides["candidate_method"] = args.method
    if args.merge_method:
        overrides["merge_method"] = args.merge_method
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.no_planes:
        overrides["use_planes"] = False
    if args.fill:
        overrides["fill"] = True
    if args.walls_only:
        overrides["walls_only"] = True
    if args.segment_objects:
        overrides["segment_objects"] = True
    if args.simplify_quads:
        overrides["simplify_quads"] = True
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)

    frames = load_frames(args.frames_dir, config)
    pipeline = Pipeline(config=config)
    pipeline.run(frames)
    out = Path(args.out_dir)
    write_run_outputs(pipeline, out)
    if args.save_state:
        save_state(pipeline, out / "state.npz")
    log.info("reconstructed %d frames, %d volumes, %d refined planes",
             len(frames), len(pipeline.grid), len(pipeline.store.planes))
    return 0


def cmd_eval(args) -> int:
    rows = []
    reports = {}
    rmsd_rows = []
    for run_dir in args.run_dirs:
        run = Path(run_dir)
        metrics_path = run / "metrics.csv"
        if not metrics_path.exists():
            raise PipelineError(f"{metrics_path}: missing metrics dump")
        header, raw = io_mod.read_csv(metrics_path, METRICS_SCHEMA)
        idx = {name: i for i, name in enumerate(header)}
        metrics = []
        for row in raw:
            metrics.append(
                FrameMetrics(
                    frame_index=int(row[idx["frame_index"]]),
                    timestamp=float(row[idx["timestamp"]]),
                    rmsd_m=float(row[idx["rmsd_m"]]) if row[idx["rmsd_m"]] else None,
                    rmsd_plane_m=float(row[idx["rmsd_plane_m"]]) if row[idx["rmsd_plane_m"]] else None,
                    fusion_ms=float(row[idx["fusion_ms"]]),
                    candidates_ms=float(row[idx["candidates_ms"]]),
                    merging_ms=float(row[idx["merging_ms"]]),
                    candidate_count=int(row[idx["candidate_count"]]),
                    refined_count=int(row[idx["refined_count"]]),
                    remeshed_count=int(row[idx["remeshed_count"]]),
                )
            )
            rmsd_rows.append([run.name, row[idx["frame_index"]], row[idx["rmsd_m"]]])
        rows.append(summarize_run(run.name, metrics))
        total_path = run / "area_total.csv"
        if total_path.exists():
            _, area_rows = io_mod.read_csv(total_path, AREA_TOTAL_SCHEMA)
            if area_rows:
                reports[run.name] = AreaReport(
                    raw_m2=float(area_rows[0][0]), filled_m2=float(area_rows[0][1])
                )
    out = Path(args.out_dir) if args.out_dir else None
    timing_text = timing_table(rows)
    print(timing_text)
    area_text = area_table(reports) if reports else ""
    if area_text:
        print(area_text)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "timing_table.txt").write_text(timing_text + "\n")
        if area_text:
            (out / "area_table.txt").write_text(area_text + "\n")
        io_mod.write_csv(out / "rmsd_series.csv", "planesdf.rmsd/v1",
                         ["run", "frame_index", "rmsd_m"], rmsd_rows)
    return 0


def cmd_segment(args) -> int:
    run = Path(args.run_dir)
    state_path = run / "state.npz"
    if not state_path.exists():
        raise PipelineError(f"{state_path}: missing state (reconstruct with --save-state)")
    config = load_config(run / "run_config.yaml")
    import dataclasses

    config = dataclasses.replace(config, segment_objects=True)
    pipeline = load_state(state_path, config)
    pipeline.finalize()
    write_run_outputs(pipeline, run)
    print(f"segments: {len(pipeline.object_segments())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planesdf",
        description="TSDF reconstruction with plane priors: synthetic scenes, "
        "reconstruction, evaluation, segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="render a synthetic scene to depth frames")
    p_synth.add_argument("scene", help="catalog scene name or scene YAML path")
    p_synth.add_argument("out_dir")
    p_synth.set_defaults(func=cmd_synth)

    p_rec = sub.add_parser("reconstruct", help="run the reconstruction pipeline")
    p_rec.add_argument("frames_dir")
    p_rec.add_argument("out_dir")
    p_rec.add_argument("--config", default=None)
    p_rec.add_argument("--method", choices=["sdf_irls", "ransac_mesh"], default=None)
    p_rec.add_argument("--merge-method", choices=["ransac", "region_growing"], default=None)
    p_rec.add_argument("--seed", type=int, default=None)
    p_rec.add_argument("--threads", type=int, default=None)
    p_rec.add_argument("--no-planes", action="store_true")
    p_rec.add_argument("--fill", action="store_true")
    p_rec.add_argument("--walls-only", action="store_true")
    p_rec.add_argument("--segment-objects", action="store_true")
    p_rec.add_argument("--simplify-quads", action="store_true")
    p_rec.add_argument("--save-state", action="store_true")
    p_rec.set_defaults(func=cmd_reconstruct)

    p_eval = sub.add_parser("eval", help="summarize one or more run directories")
    p_eval.add_argument("run_dirs", nargs="+")
    p_eval.add_argument("--out-dir", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_seg = sub.add_parser("segment", help="object segmentation over a saved run state")
    p_seg.add_argument("run_dir")
    p_seg.set_defaults(func=cmd_segment)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PLANESDF_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
