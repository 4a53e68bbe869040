"""Minimal differentiable tensor engine used by the classifier and the SSL model."""

from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad

__all__ = ["AdamState", "Tensor", "adam_step", "no_grad"]
