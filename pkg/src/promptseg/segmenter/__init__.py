from .core import (
    EnsembleConfig,
    ProbabilityMap,
    SegmenterConfig,
    binarize,
    ensemble_predict,
    grow_region,
    predict,
    predict_mask,
)
from .bridge import PROTOCOL_VERSION, BridgeClient

__all__ = [
    "EnsembleConfig",
    "ProbabilityMap",
    "SegmenterConfig",
    "binarize",
    "ensemble_predict",
    "grow_region",
    "predict",
    "predict_mask",
    "BridgeClient",
    "PROTOCOL_VERSION",
]
