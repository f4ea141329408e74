"""Text-prompted 3D segmentation: a frozen 2D-pretrained backbone adapted to volumes."""

from .errors import (
    ConfigError,
    CorruptionError,
    DimensionError,
    EvaluationError,
    FormatError,
    GenerationError,
    InputError,
    RefSAM3DError,
    UndefinedMetricError,
)
from .metrics import BinaryMask, dice, hausdorff, nsd, surface_voxels
from .pipeline.config import ModelConfig, parse_config, serialize_config
from .pipeline.data import TaskSpec, VolumeSample, augment, sample_patches, synth_dataset
from .pipeline.loss import loss
from .pipeline.model import RefSAM3D, build_model, forward
from .pipeline.train import TrainingReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "ConfigError", "CorruptionError", "DimensionError", "EvaluationError",
    "FormatError", "GenerationError", "InputError", "ModelConfig", "RefSAM3D", "RefSAM3DError",
    "TaskSpec", "TrainingReport", "UndefinedMetricError", "VolumeSample", "augment",
    "build_model", "dice", "evaluate", "forward", "hausdorff", "loss", "nsd", "parse_config",
    "sample_patches", "serialize_config", "surface_voxels", "synth_dataset", "train",
]
