"""Small numpy neural-network engine (float64, explicit backprop)."""
from .check import grad_check
from .io import dumps, load, loads, save
from .layers import (
    AvgPool1d,
    Conv1d,
    Dense,
    Flatten,
    Layer,
    MeanPool,
    NNError,
    ReLU,
    Residual,
    Sequential,
    ShapeError,
    Sigmoid,
    Standardize,
    Tanh,
    Tensor,
    ToSequence,
    layer_from_spec,
    residual_block,
)
from .losses import bce_with_logits, mae, mse, supervised_contrastive
from .optim import SGD, Adam, TrainingDiverged, train

__all__ = [
    "Adam", "AvgPool1d", "Conv1d", "Dense", "Flatten", "Layer", "MeanPool", "NNError", "ReLU",
    "Residual", "SGD", "Sequential", "ShapeError", "Sigmoid", "Standardize", "Tanh", "Tensor", "ToSequence",
    "TrainingDiverged", "bce_with_logits", "dumps", "grad_check", "layer_from_spec", "load",
    "loads", "mae", "mse", "residual_block", "save", "supervised_contrastive", "train",
]
