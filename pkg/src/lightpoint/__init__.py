"""Point cloud encoder with multivariate local geometry and a distance-aware
foreground branch, on a small numpy autodiff engine."""

from .config import RunConfig, load_config, parse_config
from .core import EncoderConfig, PointCloud, center_and_scale, validate
from .model import ModelSpec, PointModel
from .training import Schedule, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "ModelSpec", "PointCloud", "PointModel", "RunConfig", "Schedule",
    "center_and_scale", "evaluate", "load_config", "parse_config", "train", "validate",
]
