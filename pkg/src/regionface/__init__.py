"""Region-based 3D face reconstruction from a fixed-topology head database."""

from .mesh import HeadMesh, LandmarkSet, LandmarkVertexMap, RegionMap, load_head_mesh, save_head_mesh
from .pipeline import PipelineError, run_pipeline
from .config import PipelineConfig, load_config

__version__ = "0.1.0"

__all__ = ["HeadMesh", "LandmarkSet", "LandmarkVertexMap", "RegionMap", "load_head_mesh", "save_head_mesh",
           "PipelineError", "run_pipeline", "PipelineConfig", "load_config"]
