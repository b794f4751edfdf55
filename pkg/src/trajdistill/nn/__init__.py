from . import autodiff, blocks, kernels
from .autodiff import FeatureArray, no_grad
from .blocks import ParameterSet

__all__ = ["autodiff", "blocks", "kernels", "FeatureArray", "ParameterSet", "no_grad"]
