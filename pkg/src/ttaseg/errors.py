"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class FormatError(ValueError):
    """A file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Training diverged or was otherwise unable to continue."""
