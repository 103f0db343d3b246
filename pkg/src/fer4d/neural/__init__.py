"""From-scratch neural classifiers with exact gradients."""

from fer4d.neural.models import N_CLASSES, BiLSTM, ConvNet
from fer4d.neural.serialize import load_model, save_model
from fer4d.neural.training import (
    History,
    TrainConfig,
    accuracy,
    bilstm_train,
    convnet_train,
    fit,
    grad_check,
)

__all__ = [
    "N_CLASSES",
    "BiLSTM",
    "ConvNet",
    "History",
    "TrainConfig",
    "accuracy",
    "bilstm_train",
    "convnet_train",
    "fit",
    "grad_check",
    "load_model",
    "save_model",
]
