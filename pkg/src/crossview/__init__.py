"""Cross-view completion pre-training on numpy: a two-view masked autoencoder at desk scale."""

from .errors import (ConfigError, CrossViewError, DataError, DimensionError, EmptyInputError,
                     InputError, NumericalError, SingularInputError)
from .model import CrossViewNet, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CrossViewError", "DataError", "DimensionError", "EmptyInputError", "InputError",
    "NumericalError", "SingularInputError", "CrossViewNet", "ModelConfig",
]
