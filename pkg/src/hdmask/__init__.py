"""Hierarchical dynamic masks for explaining image classifiers."""

__version__ = "0.1.0"

from .dynamic import DMConfig, DMResult, run_dm
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateWeightsError,
    FormatError,
    HDMError,
    InputError,
    NumericError,
    UnsupportedVersionError,
)
from .gateway import (
    ClassifierHandle,
    FunctionClassifier,
    PreparedImage,
    RawImage,
    load_image,
    predict,
    preprocess,
    target_score_and_gradient,
)
from .hierarchy import HDMConfig, HDMResult, explain
from .saliency_io import SaliencyRecord, load_saliency, save_saliency

__all__ = [
    "CapabilityError", "ClassifierHandle", "ConfigError", "DMConfig", "DMResult", "DegenerateWeightsError",
    "FormatError", "FunctionClassifier", "HDMConfig", "HDMError", "HDMResult", "InputError", "NumericError",
    "PreparedImage", "RawImage", "SaliencyRecord", "UnsupportedVersionError", "explain", "load_image",
    "load_saliency", "predict", "preprocess", "run_dm", "save_saliency", "target_score_and_gradient",
]
