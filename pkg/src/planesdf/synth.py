"""Declarative synthetic indoor scenes with ground truth, plus a small
depth-camera renderer used as the test substrate for the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .fusion import DEPTH_MAX, DEPTH_MIN, DepthFrame
from .geometry import Array, Plane, look_at, make_pose

SCENE_SCHEMA = "planesdf.scene/v1"

FRAME_RATE = 5.0


@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    fx: float = 115.0
    fy: float = 115.0
    cx: float = 79.5
    cy: float = 59.5


@dataclass
class ScenePlane:
    """A finite rectangular patch: corner origin plus two edge vectors.

    The outward normal is unit(cross(u_edge, v_edge)); holes are rectangles in
    the patch's own (u, v) meters and absorb rays without returning depth.
    """

    name: str
    origin: Array
    u_edge: Array
    v_edge: Array
    label: str = "other"  # ground-truth label: floor | wall | ceiling | other
    holes: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.u_edge = np.asarray(self.u_edge, dtype=np.float64)
        self.v_edge = np.asarray(self.v_edge, dtype=np.float64)
        if np.linalg.norm(np.cross(self.u_edge, self.v_edge)) < 1e-12:
            raise ValueError(f"degenerate patch extent for {self.name!r}")

    @property
    def normal(self) -> Array:
        n = np.cross(self.u_edge, self.v_edge)
        return n / np.linalg.norm(n)

    def plane(self) -> Plane:
        return Plane.from_point_normal(self.origin, self.normal)

    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u_edge, self.v_edge)))

    def hole_area(self) -> float:
        return float(sum((u1 - u0) * (v1 - v0) for u0, v0, u1, v1 in self.holes))


@dataclass
class SceneBox:
    name: str
    lo: Array
    hi: Array

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if not (self.hi > self.lo).all():
            raise ValueError(f"box {self.name!r} has empty extent")


@dataclass
class SceneSpec:
    name: str
    planes: list[ScenePlane] = field(default_factory=list)
    boxes: list[SceneBox] = field(default_factory=list)
    trajectory: list[tuple[float, Array]] = field(default_factory=list)
    noise_sigma: float = 0.01
    noise_model: str = "gaussian"  # gaussian | depth_scaled_gaussian
    seed: int = 0
    gravity_up: Array = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.noise_model not in ("gaussian", "depth_scaled_gaussian"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        self.gravity_up = np.asarray(self.gravity_up, dtype=np.float64)

    def ground_truth_planes(self) -> list[tuple[Plane, str]]:
        return [(p.plane(), p.label) for p in self.planes]

    def with_noise(self, sigma: float) -> "SceneSpec":
        return replace(self, noise_sigma=sigma)


def render_depth(
    scene: SceneSpec,
    pose: Array,
    camera: CameraModel,
    seed: int,
    timestamp: float = 0.0,
) -> DepthFrame:
    """Ray-cast one depth image.  Rays are parametrized with unit z in camera
    coordinates so the ray parameter at a hit *is* the z-depth.  The nearest
    hit wins; a nearest hit inside a hole rectangle invalidates the pixel."""
    w, h = camera.width, camera.height
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones((h, w))],
        axis=-1,
    ).reshape(-1, 3)
    rot = pose[:3, :3]
    origin = pose[:3, 3]
    dirs = dirs_cam @ rot.T

    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    blocked = np.zeros(n_rays, dtype=bool)

    for patch in scene.planes:
        n = patch.normal
        denom = dirs @ n
        offset = float(np.dot(n, patch.origin))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (offset - origin @ n) / denom
        hit = np.isfinite(t) & (t > 1e-6)
        if not hit.any():
            continue
        points = origin + t[:, None] * dirs
        lu = np.linalg.norm(patch.u_edge)
        lv = np.linalg.norm(patch.v_edge)
        pu = (points - patch.origin) @ (patch.u_edge / lu)
        pv = (points - patch.origin) @ (patch.v_edge / lv)
        hit &= (pu >= 0) & (pu <= lu) & (pv >= 0) & (pv <= lv)
        in_hole = np.zeros(n_rays, dtype=bool)
        for u0, v0, u1, v1 in patch.holes:
            in_hole |= hit & (pu >= u0) & (pu <= u1) & (pv >= v0) & (pv <= v1)
        closer = hit & (t < best_t)
        best_t[closer] = t[closer]
        blocked[closer] = in_hole[closer]

    for box in scene.boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (box.lo - origin) / dirs
            t_hi = (box.hi - origin) / dirs
        t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
        t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
        hit = (t_far >= t_near) & (t_near > 1e-6) & np.isfinite(t_near)
        closer = hit & (t_near < best_t)
        best_t[closer] = t_near[closer]
        blocked[closer] = False

    depth = np.where(np.isfinite(best_t) & ~blocked, best_t, 0.0)
    valid = (depth >= DEPTH_MIN) & (depth <= DEPTH_MAX)
    depth[~valid] = 0.0

    if scene.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(n_rays)
        if scene.noise_model == "depth_scaled_gaussian":
            sigma = scene.noise_sigma * depth**2
        else:
            sigma = scene.noise_sigma
        depth = np.where(valid, depth + sigma * noise, 0.0)
        still_valid = (depth >= DEPTH_MIN) & (depth <= DEPTH_MAX)
        depth[~still_valid] = 0.0

    return DepthFrame(
        depth=depth.reshape(h, w),
        fx=camera.fx,
        fy=camera.fy,
        cx=camera.cx,
        cy=camera.cy,
        pose=pose,
        gravity_up=scene.gravity_up.copy(),
        timestamp=timestamp,
    )


def render_sequence(scene: SceneSpec, camera: CameraModel | None = None) -> list[DepthFrame]:
    camera = camera or CameraModel()
    frames = []
    for index, (timestamp, pose) in enumerate(scene.trajectory):
        frames.append(
            render_depth(scene, pose, camera, seed=scene.seed + 9973 * index, timestamp=timestamp)
        )
    return frames


def static_trajectory(pose: Array, n_frames: int, fps: float = FRAME_RATE):
    return [(i / fps, pose) for i in range(n_frames)]


def pan_trajectory(eye, yaw_range, pitches, steps_per_ring, fps: float = FRAME_RATE):
    """Camera fixed at `eye`, panning through yaw x pitch rings (radians)."""
    eye = np.asarray(eye, dtype=np.float64)
    poses = []
    i = 0
    for pitch in pitches:
        for yaw in np.linspace(yaw_range[0], yaw_range[1], steps_per_ring, endpoint=False):
            direction = np.array(
                [np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)]
            )
            poses.append((i / fps, look_at(eye, eye + direction)))
            i += 1
    return poses


def lawnmower_trajectory(xs, ys, height, fps: float = FRAME_RATE):
    """Straight-down sweeps over a grid of (x, y) stations."""
    poses = []
    i = 0
    for y in ys:
        for x in xs:
            eye = np.array([x, y, height])
            poses.append((i / fps, look_at(eye, eye + np.array([0.0, 0.0, -1.0]))))
            i += 1
    return poses


def facing_stations(
    stations, direction, fps: float = FRAME_RATE, start_index: int = 0, up_hint=(0.0, 0.0, 1.0)
):
    """Frames looking along a fixed direction from a list of eye positions;
    keeps viewing incidence low on the faced surface.  For straight up/down
    directions pass an explicit hint to control which world axis gets the
    wide side of the image."""
    direction = np.asarray(direction, dtype=np.float64)
    poses = []
    for i, eye in enumerate(stations):
        eye = np.asarray(eye, dtype=np.float64)
        poses.append(((start_index + i) / fps, look_at(eye, eye + direction, up_hint=up_hint)))
    return poses


def _axis_rect(name, label, origin, u_edge, v_edge, holes=None) -> ScenePlane:
    return ScenePlane(
        name=name,
        origin=np.array(origin, dtype=np.float64),
        u_edge=np.array(u_edge, dtype=np.float64),
        v_edge=np.array(v_edge, dtype=np.float64),
        label=label,
        holes=list(holes or []),
    )


def _room_shell(width=2.4, depth=2.4, height=1.92, holes=None):
    """Interior faces of a box room; normals point into the room."""
    holes = holes or {}
    return [
        _axis_rect("floor", "floor", (0, 0, 0), (width, 0, 0), (0, depth, 0), holes.get("floor")),
        _axis_rect("ceiling", "ceiling", (0, 0, height), (0, depth, 0), (width, 0, 0), holes.get("ceiling")),
        _axis_rect("wall_x0", "wall", (0, 0, 0), (0, depth, 0), (0, 0, height), holes.get("wall_x0")),
        _axis_rect("wall_x1", "wall", (width, 0, 0), (0, 0, height), (0, depth, 0), holes.get("wall_x1")),
        _axis_rect("wall_y0", "wall", (0, 0, 0), (0, 0, height), (width, 0, 0), holes.get("wall_y0")),
        _axis_rect("wall_y1", "wall", (0, depth, 0), (width, 0, 0), (0, 0, height), holes.get("wall_y1")),
    ]


def _room_scan(width=2.4, depth=2.4, height=1.92, frames_per_ring=12):
    center = np.array([width / 2, depth / 2, height / 2])
    pitches = np.deg2rad([-46.0, -15.0, 16.0, 47.0])
    return pan_trajectory(center, (0.0, 2 * np.pi), pitches, frames_per_ring)


def inward_orbit(center, radius, yaw_steps, pitches, fps: float = FRAME_RATE, start_index: int = 0):
    """Stations on a circle looking back at the center: fills in the sides of
    free-standing objects that a center-pan rig can never get behind."""
    center = np.asarray(center, dtype=np.float64)
    poses = []
    i = start_index
    for pitch in pitches:
        for yaw in np.linspace(0.0, 2 * np.pi, yaw_steps, endpoint=False):
            eye = center + radius * np.array([np.cos(yaw), np.sin(yaw), 0.0])
            direction = -np.array(
                [np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)]
            )
            poses.append((i / fps, look_at(eye, eye + direction)))
            i += 1
    return poses


def standard_scenes() -> dict[str, SceneSpec]:
    """Desk-scale scene catalog exercising every pipeline behavior."""
    scenes: dict[str, SceneSpec] = {}

    floor = _axis_rect("floor", "floor", (0, 0, 0), (2.4, 0, 0), (0, 2.4, 0))
    sweep = lawnmower_trajectory(xs=(0.72, 1.68), ys=(0.72, 1.68), height=1.5)
    hold = static_trajectory(look_at((1.2, 1.2, 1.5), (1.2, 1.2, 0.0), up_hint=(0, 1, 0)), 60)
    scenes["flat_floor"] = SceneSpec(
        name="flat_floor",
        planes=[floor],
        trajectory=sweep + [(t + len(sweep) / FRAME_RATE, pose) for t, pose in hold],
        noise_sigma=0.01,
        seed=11,
    )

    scenes["room_4walls"] = SceneSpec(
        name="room_4walls",
        planes=_room_shell(),
        trajectory=_room_scan(),
        noise_sigma=0.0,
        seed=23,
    )

    # Floating boxes keep their silhouettes inside the pan rings' carving
    # reach; boxes resting on the floor would lose their lower sides to the
    # floor-plane correction anyway.
    clutter = [
        SceneBox("crate_a", (0.60, 0.60, 0.15), (0.96, 0.96, 0.51)),
        SceneBox("crate_b", (1.50, 0.90, 0.15), (1.92, 1.32, 0.57)),
        SceneBox("crate_c", (0.90, 1.50, 0.21), (1.26, 1.86, 0.57)),
    ]
    scan = _room_scan(frames_per_ring=10)
    scan += inward_orbit(
        (1.2, 1.2, 0.96), 1.05, 8, np.deg2rad([-25.0, 8.0]), start_index=len(scan)
    )
    scenes["room_cluttered"] = SceneSpec(
        name="room_cluttered",
        planes=_room_shell(),
        boxes=clutter,
        trajectory=scan,
        noise_sigma=0.0,
        seed=31,
    )

    # Holes total 11.6352 m^2 of the 58.9824 m^2 shell (19.7%, the "one fifth
    # masked" scenario).  The room is larger than the others so every hole
    # keeps a clean ring of observed volumes around it: the ring members
    # behind each holed surface see only that surface's band, and the plane
    # extents that bound the fill are built from members.  The scan uses
    # near-perpendicular station passes per face, arranged so no ray grazes
    # along a holed surface or hits its rim region obliquely (grazing
    # projective samples are strongly biased and erode the unobserved prism).
    hw, hd, hh = 3.84, 3.84, 1.92
    hole_floor = [(0.72, 0.72, 3.15, 3.12)]  # 2.43 x 2.40 m
    hole_wall_x0 = [(0.48, 0.45, 3.36, 1.47)]  # 2.88 x 1.02 m (u along y, v up)
    hole_wall_y0 = [(0.45, 0.48, 1.47, 3.36)]  # u up, v along x: 2.88 x 1.02 m
    passes = []
    down = [(x, y, 1.85) for x in (1.30, 2.54) for y in (0.97, 1.93, 2.89)]
    up = [(x, y, 0.45) for x in (0.80, 1.92, 3.04) for y in (0.77, 1.92, 3.07)]
    passes += facing_stations(down, (0, 0, -1), up_hint=(0, 1, 0))
    passes += facing_stations(up, (0, 0, 1), start_index=len(passes), up_hint=(0, 1, 0))
    # Holed walls are scanned with zero lateral spill (stations 1.29 m from
    # the side walls); the opposite passes are placed so their spill ends just
    # past the sibling hole's far rim and covers the leftover corner strip.
    wall_eyes = {
        (-1, 0, 0): [(1.80, y, 0.96) for y in (1.29, 2.55)],
        (1, 0, 0): [(2.04, y, 0.96) for y in (0.95, 2.89)],
        (0, -1, 0): [(x, 1.80, 0.96) for x in (1.29, 2.55)],
        (0, 1, 0): [(x, 2.04, 0.96) for x in (0.95, 2.89)],
    }
    index = len(passes)
    for direction, eyes in wall_eyes.items():
        passes += facing_stations(eyes, direction, start_index=index)
        index += len(eyes)
    scenes["room_with_holes"] = SceneSpec(
        name="room_with_holes",
        planes=_room_shell(
            hw, hd, hh,
            holes={"floor": hole_floor, "wall_x0": hole_wall_x0, "wall_y0": hole_wall_y0},
        ),
        trajectory=passes,
        noise_sigma=0.0,
        seed=37,
    )

    scenes["corner_close"] = SceneSpec(
        name="corner_close",
        planes=[
            _axis_rect("floor", "floor", (0, 0, 0), (1.44, 0, 0), (0, 1.44, 0)),
            _axis_rect("wall", "wall", (0, 0, 0), (0, 1.44, 0), (0, 0, 0.96)),
        ],
        trajectory=pan_trajectory(
            (0.80, 0.72, 0.55), (np.pi * 0.75, np.pi * 1.25), np.deg2rad([-35.0, -5.0]), 8
        ),
        noise_sigma=0.0,
        seed=41,
    )

    scenes["two_touching_boxes"] = SceneSpec(
        name="two_touching_boxes",
        planes=[_axis_rect("floor", "floor", (0, 0, 0), (2.4, 0, 0), (0, 2.4, 0))],
        boxes=[
            SceneBox("box_a", (0.90, 1.02, 0.15), (1.26, 1.38, 0.51)),
            SceneBox("box_b", (1.26, 1.02, 0.15), (1.62, 1.38, 0.51)),
        ],
        trajectory=pan_trajectory(
            (1.26, 1.20, 1.35), (0.0, 2 * np.pi), np.deg2rad([-55.0, -35.0]), 10
        ),
        noise_sigma=0.0,
        seed=43,
    )

    scenes["floor_two_patches"] = SceneSpec(
        name="floor_two_patches",
        planes=[
            _axis_rect("patch_a", "floor", (0, 0, 0), (0.96, 0, 0), (0, 0.96, 0)),
            _axis_rect("patch_b", "floor", (2.40, 0, 0), (0.96, 0, 0), (0, 0.96, 0)),
        ],
        trajectory=lawnmower_trajectory(
            xs=(0.30, 0.66, 2.70, 3.06), ys=(0.30, 0.66), height=1.5
        ),
        noise_sigma=0.0,
        seed=47,
    )

    # A leaning panel hides most of wall_x0; tilted ~19 deg so its own merged
    # plane is labeled neither wall nor floor.
    panel = ScenePlane(
        name="panel",
        origin=np.array([0.65, 0.24, 0.15]),
        u_edge=np.array([0.0, 1.92, 0.0]),
        v_edge=np.array([-0.57, 0.0, 1.65]),
        label="other",
    )
    scenes["room_occluded_wall"] = SceneSpec(
        name="room_occluded_wall",
        planes=_room_shell() + [panel],
        trajectory=_room_scan(),
        noise_sigma=0.0,
        seed=53,
    )

    return scenes


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "name": scene.name,
        "noise_sigma": float(scene.noise_sigma),
        "noise_model": scene.noise_model,
        "seed": int(scene.seed),
        "gravity_up": [float(x) for x in scene.gravity_up],
        "planes": [
            {
                "name": p.name,
                "label": p.label,
                "origin": [float(x) for x in p.origin],
                "u_edge": [float(x) for x in p.u_edge],
                "v_edge": [float(x) for x in p.v_edge],
                "holes": [[float(x) for x in hole] for hole in p.holes],
            }
            for p in scene.planes
        ],
        "boxes": [
            {
                "name": b.name,
                "lo": [float(x) for x in b.lo],
                "hi": [float(x) for x in b.hi],
            }
            for b in scene.boxes
        ],
        "trajectory": [
            {"timestamp": float(t), "pose": [[float(x) for x in row] for row in pose]}
            for t, pose in scene.trajectory
        ],
    }


def scene_from_dict(data: dict) -> SceneSpec:
    if data.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unsupported scene schema {data.get('schema')!r}")
    planes = [
        ScenePlane(
            name=p["name"],
            origin=np.array(p["origin"]),
            u_edge=np.array(p["u_edge"]),
            v_edge=np.array(p["v_edge"]),
            label=p.get("label", "other"),
            holes=[tuple(h) for h in p.get("holes", [])],
        )
        for p in data.get("planes", [])
    ]
    boxes = [SceneBox(b["name"], np.array(b["lo"]), np.array(b["hi"])) for b in data.get("boxes", [])]
    trajectory = [
        (float(e["timestamp"]), np.array(e["pose"], dtype=np.float64))
        for e in data.get("trajectory", [])
    ]
    return SceneSpec(
        name=data["name"],
        planes=planes,
        boxes=boxes,
        trajectory=trajectory,
        noise_sigma=float(data.get("noise_sigma", 0.0)),
        noise_model=data.get("noise_model", "gaussian"),
        seed=int(data.get("seed", 0)),
        gravity_up=np.array(data.get("gravity_up", [0.0, 0.0, 1.0])),
    )


def save_scene(scene: SceneSpec, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scene_to_dict(scene), fh, sort_keys=False)


def load_scene(path) -> SceneSpec:
    with open(path) as fh:
        return scene_from_dict(yaml.safe_load(fh))
