"""Residual 3D CNN engine for per-pixel hyperspectral image classification."""

__version__ = "0.1.0"

from .data import (
    HsiCube,
    LabelGrid,
    SplitManifest,
    extract_patch,
    load_cube,
    load_labels,
    load_split,
    normalize,
    save_cube,
    save_labels,
    save_split,
    stratified_split,
)
from .metrics import (
    ConfusionMatrix,
    kappa,
    overall_accuracy,
    per_class_accuracy,
    render_class_map,
    write_report,
)
from .network import (
    Model,
    ModelConfig,
    backward,
    build_model,
    forward,
    load_checkpoint,
    param_count,
    save_checkpoint,
    shape_trace,
)
from .training import (
    OptimizerState,
    TrainConfig,
    evaluate,
    predict_map,
    sgd_step,
    train,
)

__all__ = [
    "HsiCube",
    "LabelGrid",
    "SplitManifest",
    "extract_patch",
    "load_cube",
    "load_labels",
    "load_split",
    "normalize",
    "save_cube",
    "save_labels",
    "save_split",
    "stratified_split",
    "ConfusionMatrix",
    "kappa",
    "overall_accuracy",
    "per_class_accuracy",
    "render_class_map",
    "write_report",
    "Model",
    "ModelConfig",
    "backward",
    "build_model",
    "forward",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "shape_trace",
    "OptimizerState",
    "TrainConfig",
    "evaluate",
    "predict_map",
    "sgd_step",
    "train",
]
