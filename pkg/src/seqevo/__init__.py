"""Evolutionary edit diffusion over protein-like sequences."""

from .alphabet import Alphabet
from .model import Denoiser, DenoiserConfig, DenoiserOutput, load_checkpoint, save_checkpoint

__all__ = [
    "Alphabet",
    "Denoiser",
    "DenoiserConfig",
    "DenoiserOutput",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
