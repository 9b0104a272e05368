"""Run configuration: one schema-versioned YAML file carries every pipeline
parameter; unknown keys are rejected so configs stay reproducible."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .detect import METHOD_RANSAC_MESH, METHOD_SDF_IRLS, FitConfig
from .grid import VoxelGridConfig
from .merge import MergeConfig
from .refine import JitterGateState
from .segment import LabelRules
from .synth import CameraModel

CONFIG_SCHEMA = "planesdf.config/v1"

MERGE_RANSAC = "ransac"
MERGE_REGION_GROWING = "region_growing"


@dataclass
class RunConfig:
    grid: VoxelGridConfig = field(default_factory=VoxelGridConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    labels: LabelRules = field(default_factory=LabelRules)
    camera: CameraModel = field(default_factory=CameraModel)
    candidate_method: str = METHOD_SDF_IRLS
    merge_method: str = MERGE_RANSAC
    use_planes: bool = True
    denoise: bool = True
    fill: bool = False
    simplify_quads: bool = False
    walls_only: bool = False
    segment_objects: bool = False
    strict_product_band: bool = False
    infinite_floor: bool = False  # exposed, not exercised by acceptance
    angle_gate_deg: float = 1.0
    offset_gate: float = 0.01
    re_mesh_radius: float = 4.0
    gravity_up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.candidate_method not in (METHOD_SDF_IRLS, METHOD_RANSAC_MESH):
            raise ValueError(f"unknown candidate_method {self.candidate_method!r}")
        if self.merge_method not in (MERGE_RANSAC, MERGE_REGION_GROWING):
            raise ValueError(f"unknown merge_method {self.merge_method!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.re_mesh_radius <= 0:
            raise ValueError("re_mesh_radius must be positive")

    def gate_state(self) -> JitterGateState:
        return JitterGateState(angle_gate_deg=self.angle_gate_deg, offset_gate=self.offset_gate)

    def gravity(self) -> np.ndarray:
        return np.asarray(self.gravity_up, dtype=np.float64)


_SECTIONS = {
    "grid": VoxelGridConfig,
    "fit": FitConfig,
    "merge": MergeConfig,
    "labels": LabelRules,
    "camera": CameraModel,
}


def _build_section(cls, data: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in {context}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    schema = data.pop("schema", None)
    if schema != CONFIG_SCHEMA:
        raise ValueError(f"unsupported config schema {schema!r}, expected {CONFIG_SCHEMA!r}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, None)
        if section is not None:
            if not isinstance(section, dict):
                raise ValueError(f"config section {name!r} must be a mapping")
            kwargs[name] = _build_section(cls, section, name)
    top_known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top_known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "gravity_up" in data:
        data["gravity_up"] = tuple(float(v) for v in data["gravity_up"])
    kwargs.update(data)
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict:
    out: dict = {"schema": CONFIG_SCHEMA}
    for name, _ in _SECTIONS.items():
        section = getattr(config, name)
        out[name] = dataclasses.asdict(section)
    for f in dataclasses.fields(RunConfig):
        if f.name in _SECTIONS:
            continue
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must contain a mapping")
    return config_from_dict(data)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)
