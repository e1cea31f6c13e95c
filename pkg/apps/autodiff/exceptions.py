from __future__ import annotations


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an op's shape rule."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        rendered = " and ".join(str(tuple(shape)) for shape in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class GradientError(ValueError):
    """Raised when a backward pass is requested from a non-scalar root."""
