"""Place recognition for stereo visual odometry.

Keyframe point clouds are accumulated into imitated omnidirectional range
scans, summarized by global descriptors (intensity histograms, multi-plane
projections, polar height-range grids), and matched through fused
structure/intensity difference matrices.
"""

from .config import PipelineConfig
from .errors import ConfigError, DataFormatError, DegenerateInputError, VoprError
from .geometry import RigidTransform
from .ingest import Keyframe, PointCloud, load_sequence, write_sequence

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "RigidTransform",
    "Keyframe",
    "PointCloud",
    "load_sequence",
    "write_sequence",
    "VoprError",
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "__version__",
]
