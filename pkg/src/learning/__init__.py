"""Capture surrogate and aiming-policy learning."""

from .policy import (
    PolicyModel,
    RewardConfig,
    Transition,
    apply_action,
    nominal_aiming,
    ppo_update,
    reward,
    run_episode,
    sample_scenario,
    training_loop,
)
from .surrogate import (
    ErrorModel,
    SurrogateModel,
    SurrogateNet,
    extract_features,
    fit_error_model,
    noisy_predict,
    train,
)

__all__ = [
    "ErrorModel",
    "PolicyModel",
    "RewardConfig",
    "SurrogateModel",
    "SurrogateNet",
    "Transition",
    "apply_action",
    "extract_features",
    "fit_error_model",
    "noisy_predict",
    "nominal_aiming",
    "ppo_update",
    "reward",
    "run_episode",
    "sample_scenario",
    "train",
    "training_loop",
]
