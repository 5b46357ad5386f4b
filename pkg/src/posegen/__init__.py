"""Unpaired pose-to-appearance generation with a class-structured style code."""
from .config import LossWeights, TrainConfig, load_config
from .estimator import PoseStyleGenerator
from .inference import StyleSource, infer, infer_instance, infer_sample

__version__ = "0.1.0"

__all__ = [
    "LossWeights",
    "PoseStyleGenerator",
    "StyleSource",
    "TrainConfig",
    "infer",
    "infer_instance",
    "infer_sample",
    "load_config",
]
