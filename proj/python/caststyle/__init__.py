"""Contrastive arbitrary style transfer.

Images are float32 arrays shaped [batch, 3, H, W] with values in [-1, 1].
Loss helpers take float64 arrays and return Python floats.
"""

import json

from ._core import (
    ArgumentError,
    ConfigError,
    DecodeError,
    Error,
    FeatureExtractor,
    IoError,
    Model,
    NumericError,
    StyleBank,
    adversarial_loss,
    cycle_loss,
    deception_rate,
    gram_matrix,
    gram_style_loss,
    info_nce,
    load_image,
    make_toy_corpus,
    run_cli,
    save_image,
    total_loss,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DecodeError",
    "Error",
    "FeatureExtractor",
    "IoError",
    "Model",
    "NumericError",
    "StyleBank",
    "adversarial_loss",
    "cycle_loss",
    "deception_rate",
    "gram_matrix",
    "gram_style_loss",
    "info_nce",
    "load_image",
    "make_toy_corpus",
    "model_config",
    "run_cli",
    "save_image",
    "total_loss",
]


def model_config(model):
    """Training config of a loaded model as a dict."""
    return json.loads(model.config_json)
