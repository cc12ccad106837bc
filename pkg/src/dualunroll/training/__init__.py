from .objectives import (ascent_residuals, descent_residuals,
                         meta_lagrangian_dual, meta_lagrangian_primal,
                         project_weights)
from .samplers import SamplerConfig, allocate_counts, sample_multipliers
from .loop import (TrainConfig, TrainerState, init_state, joint_train, load_state,
                   train_dual, train_primal, validation_violation)

__all__ = [
    "ascent_residuals", "descent_residuals", "meta_lagrangian_dual",
    "meta_lagrangian_primal", "project_weights", "SamplerConfig",
    "allocate_counts", "sample_multipliers", "TrainConfig", "TrainerState",
    "init_state", "joint_train", "load_state", "train_dual", "train_primal",
    "validation_violation",
]
