"""Exception types shared across the package."""


class UnmixError(Exception):
    """Base class for all errors raised by nlunmix."""


class DataFormatError(UnmixError):
    """A file or array does not satisfy the declared layout or invariants."""


class RankDeficientError(UnmixError):
    """An endmember matrix does not have full column rank."""


class BracketError(UnmixError):
    """A root bracket does not satisfy the required sign-change condition."""


class ConvergenceError(UnmixError):
    """An iterative solver hit its iteration cap without converging."""


class ConstraintError(UnmixError):
    """A quadratic equality constraint cannot be met by any multiplier."""


class StageError(UnmixError):
    """Wraps a failure inside one stage of the unmixing pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
