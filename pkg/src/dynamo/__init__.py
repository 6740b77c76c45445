"""Spectral toolkit for alpha-effect instability and kinematic dynamo growth."""

try:
    from importlib.metadata import version as _version

    __version__ = _version("dynamo")
except Exception:  # pragma: no cover - editable/dev installs without metadata
    __version__ = "0.1.0"

from .errors import ConfigError, DynamoError, NumericalError
from .fields import AbcParams, SpectralField, make_abc

__all__ = [
    "AbcParams",
    "ConfigError",
    "DynamoError",
    "NumericalError",
    "SpectralField",
    "make_abc",
    "__version__",
]
