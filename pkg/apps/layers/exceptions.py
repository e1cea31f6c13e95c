from __future__ import annotations


class GeometryError(ValueError):
    """Raised when a convolution or pooling geometry does not fit its input."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or from an unknown version."""
