"""Time-series modelling with adaptive spectral filtering and interactive convolutions."""

from .model import ModelConfig, TSLANet, load_checkpoint, save_checkpoint

__all__ = ["ModelConfig", "TSLANet", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
