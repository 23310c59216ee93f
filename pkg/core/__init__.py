"""Core building blocks: autodiff tensors, layers, the model and its schemas."""

from .model import AtLstmModel, Prediction, VariantTag, build_variant
from .tensor import Tape, Tensor, backward, grad_check

__all__ = [
    "AtLstmModel",
    "Prediction",
    "Tape",
    "Tensor",
    "VariantTag",
    "backward",
    "build_variant",
    "grad_check",
]
