"""Recurrent text classifier, trainer, and geometric-mean ensemble."""

from .model import (
    EmbeddingTriple,
    ModelConfig,
    TAPS,
    forward,
    forward_batch,
    gradient_check,
    init_params,
    loss_and_grads,
)
from .training import TrainResult, train_member
from .ensemble import (
    Ensemble,
    EvalResult,
    Member,
    default_member_configs,
    ensemble_predict,
    ensemble_predict_batch,
    evaluate,
    geometric_mean_probs,
    load_ensemble,
    member_forward,
    member_forward_batch,
    save_ensemble,
    train_ensemble,
)

__all__ = [
    "EmbeddingTriple",
    "ModelConfig",
    "TAPS",
    "forward",
    "forward_batch",
    "gradient_check",
    "init_params",
    "loss_and_grads",
    "TrainResult",
    "train_member",
    "Ensemble",
    "EvalResult",
    "Member",
    "default_member_configs",
    "ensemble_predict",
    "ensemble_predict_batch",
    "evaluate",
    "geometric_mean_probs",
    "load_ensemble",
    "member_forward",
    "member_forward_batch",
    "save_ensemble",
    "train_ensemble",
]
