"""Simulated ground truth for mid-resolution classifiers.

The package covers the full chain: synthetic scene generation from a linear
mixture model, fully constrained spectral unmixing by projected gradient
descent, spatial/spectral resolution adaptation, label synthesis, patch
dataset construction, and a small from-scratch convolutional classifier.
"""

from specgt.errors import (
    DataValidationError,
    NumericalError,
    SingularPointError,
    SpecGTError,
)

__version__ = "0.1.0"

__all__ = [
    "DataValidationError",
    "NumericalError",
    "SingularPointError",
    "SpecGTError",
    "__version__",
]
