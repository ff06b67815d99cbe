"""Lorentz-equivariant quantum graph neural network for jet tagging."""
from .model import LorentzEqgnn, ModelConfig

__all__ = ["LorentzEqgnn", "ModelConfig"]
__version__ = "0.1.0"
