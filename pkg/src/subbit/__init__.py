"""Sub-1-bit structured binarization of linear-layer weights.

Weights are pruned to an N:M pattern, salient columns are binarized twice
(value plus residual), the remaining kept weights are split into three
magnitude regions binarized separately, and quantization error is pushed
into later columns through the calibration Hessian.
"""

from .allocation import AllocationPlan, NMRatio, Strategy
from .errors import SubbitError
from .packing import bit_report, decode, encode
from .pipeline import QuantConfig, evaluate_layer, flip_experiment, quantize_layer, quantize_model
from .quantizer import Region, StructuredBinaryLayer, reconstruct
from .scoring import ScorerKind
from .tensorio import load_manifest, synth_layer, synth_model

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan", "NMRatio", "QuantConfig", "Region", "ScorerKind", "Strategy",
    "StructuredBinaryLayer", "SubbitError", "bit_report", "decode", "encode",
    "evaluate_layer", "flip_experiment", "load_manifest", "quantize_layer", "quantize_model",
    "reconstruct", "synth_layer", "synth_model",
]
