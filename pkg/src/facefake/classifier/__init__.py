from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import EfficientNetClassifier, ResolutionError, count_params
from .scaling import (
    BASE_STAGES,
    VARIANTS,
    BackboneConfig,
    ScalingConfig,
    ScalingConstraintWarning,
    StageSpec,
    build_variant,
    compound_multipliers,
    round_depth,
    round_width,
    walk_plan,
)
