"""Focal and global feature-map distillation at desk scale.

The package splits into a minimal autodiff core (`tensor`, `gradcheck`),
the mask builders (`masks`), the global-context relation block (`gcblock`),
the distillation loss stack (`losses`), a synthetic training pipeline
(`pipeline`, `runner`), and the command-line harness (`cli`).
"""

from .errors import (
    ConfigError,
    DimensionError,
    FgdError,
    GraphError,
    NonFiniteLossError,
    OracleError,
    ParameterError,
)
from .gcblock import GcBlockParams, context_pool, init_gcblock, relation, transform
from .gradcheck import GradCheckReport, gradcheck
from .losses import (
    ABLATION_MODES,
    AdaptationLayer,
    FgdHyperParams,
    LevelBatch,
    LossReport,
    PRESETS,
    ablation_mode,
    attention_loss,
    baseline_loss,
    feature_loss,
    fgd_total,
    global_loss,
    init_adaptation,
    preset,
)
from .masks import (
    BoxSet,
    LevelGeometry,
    MaskSet,
    Rect,
    attention_masks,
    binary_mask,
    build_masks,
    channel_attention_map,
    project_boxes,
    read_box_file,
    scale_mask,
    spatial_attention_map,
    write_box_file,
)
from .pipeline import (
    SceneConfig,
    SgdOptimizer,
    SyntheticScene,
    ToyNet,
    TrainState,
    forward_features,
    generate_scene,
    init_toynet,
    level_geometries,
    task_loss,
    train_step,
)
from .runner import build_state, distill_run, dump_masks, mean_spatial_gap
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = [
    "ABLATION_MODES",
    "AdaptationLayer",
    "BoxSet",
    "ConfigError",
    "DimensionError",
    "FgdError",
    "FgdHyperParams",
    "GcBlockParams",
    "GradCheckReport",
    "GraphError",
    "LevelBatch",
    "LevelGeometry",
    "LossReport",
    "MaskSet",
    "NonFiniteLossError",
    "OracleError",
    "Parameter",
    "ParameterError",
    "PRESETS",
    "Rect",
    "SceneConfig",
    "SgdOptimizer",
    "SyntheticScene",
    "Tensor",
    "ToyNet",
    "TrainState",
    "ablation_mode",
    "attention_loss",
    "attention_masks",
    "baseline_loss",
    "binary_mask",
    "build_masks",
    "build_state",
    "channel_attention_map",
    "context_pool",
    "distill_run",
    "dump_masks",
    "feature_loss",
    "fgd_total",
    "forward_features",
    "generate_scene",
    "global_loss",
    "gradcheck",
    "init_adaptation",
    "init_gcblock",
    "init_toynet",
    "level_geometries",
    "mean_spatial_gap",
    "preset",
    "project_boxes",
    "read_box_file",
    "relation",
    "scale_mask",
    "spatial_attention_map",
    "task_loss",
    "train_step",
    "transform",
    "write_box_file",
]
