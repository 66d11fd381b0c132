"""Partition-based saliency ranking at desk scale."""

__version__ = "0.1.0"

from .tensor import Tensor, Parameter, no_grad

__all__ = ["Tensor", "Parameter", "no_grad", "__version__"]
