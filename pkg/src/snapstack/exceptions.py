class SnapstackError(Exception):
    """Base class for errors raised by snapstack."""


class ShapeError(SnapstackError, ValueError):
    """Incompatible tensor or layer shapes."""


class CheckpointError(SnapstackError):
    """Checkpoint file is truncated, malformed or belongs to another network."""


class TrainingError(SnapstackError, FloatingPointError):
    """Training diverged (non-finite loss or gradient)."""


class ConvergenceError(SnapstackError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class ManifestError(SnapstackError, ValueError):
    """Invalid dataset manifest."""

