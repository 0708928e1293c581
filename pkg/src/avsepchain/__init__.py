"""Two-stage audio-visual target speech extraction.

A lip-conditioned dual-path separator produces a preliminary estimate; a
visual-dominant synthesizer predicts a residual that is added back to it.
"""

from .config import ExperimentConfig
from .errors import (
    AVSepChainError,
    ConfigError,
    DegenerateInputError,
    FormatError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
    InvalidStateError,
    NumericError,
)
from .model import AVSepChain

__all__ = [
    "AVSepChain",
    "AVSepChainError",
    "ConfigError",
    "DegenerateInputError",
    "ExperimentConfig",
    "FormatError",
    "IncompatibleCheckpointError",
    "InvalidArgumentError",
    "InvalidStateError",
    "NumericError",
]

__version__ = "0.1.0"
