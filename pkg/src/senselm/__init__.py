"""Desk-scale multimodal sensing-to-language alignment pipeline."""

from .tensor import (Tensor, adaptive_avg_pool_1d, cross_entropy, no_grad,
                     precision, softmax)
from .gradcheck import grad_check
from .nn import Module, Parameter

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Parameter",
    "Module",
    "softmax",
    "cross_entropy",
    "adaptive_avg_pool_1d",
    "grad_check",
    "precision",
    "no_grad",
    "__version__",
]
