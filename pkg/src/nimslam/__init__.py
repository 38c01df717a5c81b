"""Dense RGB SLAM with a neural implicit map.

The scene is encoded by a multi-resolution feature volume plus a small MLP
decoder; camera poses and the map are optimized jointly by minimizing
rendering, multi-scale patch warping, and depth smoothness losses over a
sliding window of frames.
"""

from .config import SlamConfig, load_config, save_config
from .geometry import CameraIntrinsics, Pose, PoseDelta

__version__ = "0.1.0"

__all__ = [
    "SlamConfig",
    "load_config",
    "save_config",
    "CameraIntrinsics",
    "Pose",
    "PoseDelta",
    "__version__",
]
