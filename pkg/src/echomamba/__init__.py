"""Bidirectional selective state-space sequential recommender with a
learnable spectral filter, on a small numpy autodiff engine."""
from . import kernels, tensor
from .model import EchoMambaModel, ModelConfig

__version__ = "0.1.0"
__all__ = ["EchoMambaModel", "ModelConfig", "kernels", "tensor"]
