"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-contract input data."""


class DegeneratePatternError(InputError):
    """A confusion-metric denominator is zero for the named pattern."""

    def __init__(self, pattern: str, reason: str):
        super().__init__(f"degenerate pattern {pattern!r}: {reason}")
        self.pattern = pattern


class DecodeFailure(RuntimeError):
    """Every state path has zero probability at some step."""

    def __init__(self, step: int):
        super().__init__(f"no state path has nonzero probability at step {step}")
        self.step = step


class EstimationFailure(RuntimeError):
    """Model fitting cannot proceed (zero-probability observations, etc.)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and frame index."""

    def __init__(self, stage: str, frame: int, cause: Exception):
        super().__init__(f"stage {stage!r} failed at frame {frame}: {cause}")
        self.stage = stage
        self.frame = frame
        self.cause = cause
