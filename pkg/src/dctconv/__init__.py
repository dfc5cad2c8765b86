"""Convolutional networks whose filters are inverse DCTs of partly switched-off coefficients."""

from .dct import dct1, dct2, idct1, idct2, idct_grad
from .dct_conv import SpectralConv2D, SpectralPointwise, make_mask
from .model_builder import ModelConfig, build_model, param_count
from .presets import get_preset

__version__ = "0.1.0"

__all__ = [
    "dct1", "dct2", "idct1", "idct2", "idct_grad",
    "SpectralConv2D", "SpectralPointwise", "make_mask",
    "ModelConfig", "build_model", "param_count", "get_preset",
]
