"""Graduated optimization for generalized linear models with non-convex activations."""

from .activations import (
    ActivationSpec,
    Kind,
    activate,
    activate_deriv,
    activate_second_deriv,
    graduate_label,
    invert,
)

__version__ = "0.1.0"
