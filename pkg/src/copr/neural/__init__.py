"""Deterministic MLP framework, losses, training loops, and model files."""

from .core import (
    Activation,
    AdamState,
    Layer,
    MlpModel,
    adam_step,
    forward_batch,
    gelu,
    gelu_derivative,
    init_adam,
    init_mlp,
    mlp_forward,
    mlp_grad,
    regress_nonlinear,
    regress_nonlinear_batch,
    splitmix64,
)
from .losses import loss_distance, loss_relative, loss_triplet
from .model_io import load_model, save_model
from .training import (
    DEFAULT_TRIPLET_MARGIN,
    ENCODER_DEFAULT_LR,
    ENCODER_VARIANTS,
    REGRESSOR_DEFAULT_LR,
    EncoderDataset,
    TrainConfig,
    TrainResult,
    build_training_pairs,
    default_encoder_config,
    encoder_widths,
    init_encoder,
    init_regressor,
    init_rpe_head,
    mse_over,
    regressor_widths,
    train_encoder,
    train_encoder_full,
    train_regressor,
    train_regressor_full,
)

__all__ = [
    "Activation",
    "AdamState",
    "Layer",
    "MlpModel",
    "adam_step",
    "forward_batch",
    "gelu",
    "gelu_derivative",
    "init_adam",
    "init_mlp",
    "mlp_forward",
    "mlp_grad",
    "regress_nonlinear",
    "regress_nonlinear_batch",
    "splitmix64",
    "loss_distance",
    "loss_relative",
    "loss_triplet",
    "load_model",
    "save_model",
    "DEFAULT_TRIPLET_MARGIN",
    "ENCODER_DEFAULT_LR",
    "ENCODER_VARIANTS",
    "REGRESSOR_DEFAULT_LR",
    "EncoderDataset",
    "TrainConfig",
    "TrainResult",
    "build_training_pairs",
    "default_encoder_config",
    "encoder_widths",
    "init_encoder",
    "init_regressor",
    "init_rpe_head",
    "mse_over",
    "regressor_widths",
    "train_encoder",
    "train_encoder_full",
    "train_regressor",
    "train_regressor_full",
]
