"""KWT-Tiny keyword-spotting transformer: float, quantized and LUT-accelerated inference."""

from .model import KWT_TINY, ModelConfig, QuantParams, WeightSet, load_input, load_weights
from .pipeline import ClassResult, Mode, infer

__all__ = ["KWT_TINY", "ModelConfig", "QuantParams", "WeightSet", "load_input", "load_weights",
           "ClassResult", "Mode", "infer"]
__version__ = "0.1.0"
