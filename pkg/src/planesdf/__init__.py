"""planesdf: TSDF reconstruction with plane priors detected on the SDF."""

from .config import RunConfig
from .detect import FitConfig, PlaneCandidate, fit_ransac_mesh, fit_sdf_irls
from .fusion import DepthFrame, integrate
from .geometry import Plane
from .grid import Volume, VolumeGrid, VoxelGridConfig
from .merge import MergeConfig, RefinedPlane, compatible, merge_ransac, merge_region_growing
from .meshing import VolumeMesh, extract_mesh
from .pipeline import Pipeline
from .refine import CorrectionContext, corrected_sdf, jitter_gate
from .synth import SceneSpec, render_depth, standard_scenes

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "FitConfig",
    "PlaneCandidate",
    "fit_ransac_mesh",
    "fit_sdf_irls",
    "DepthFrame",
    "integrate",
    "Plane",
    "Volume",
    "VolumeGrid",
    "VoxelGridConfig",
    "MergeConfig",
    "RefinedPlane",
    "compatible",
    "merge_ransac",
    "merge_region_growing",
    "VolumeMesh",
    "extract_mesh",
    "Pipeline",
    "CorrectionContext",
    "corrected_sdf",
    "jitter_gate",
    "SceneSpec",
    "render_depth",
    "standard_scenes",
    "__version__",
]
