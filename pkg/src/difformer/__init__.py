"""Point cloud registration with graph-diffusion features, heat-kernel-signature
attention, and a learned weighted-SVD alignment solver."""

from .cloud_io import PairRecord, PointCloud
from .config import RunConfig, make_config
from .icp import icp
from .model import Difformer
from .training import Metrics, compute_metrics
from .transforms import RigidTransform, sample_random_transform

__version__ = "0.1.0"

__all__ = ["Difformer", "Metrics", "PairRecord", "PointCloud", "RigidTransform",
           "RunConfig", "compute_metrics", "icp", "make_config",
           "sample_random_transform", "__version__"]
